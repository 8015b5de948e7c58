fn main() {
    std::process::exit(gridptr_cli::run(std::env::args_os()));
}
