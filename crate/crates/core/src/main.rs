fn main() {
    std::process::exit(fingergrowth::cli::run(std::env::args_os()));
}
