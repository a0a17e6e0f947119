fn main() {
    std::process::exit(voxforge::cli::run(std::env::args_os()));
}
