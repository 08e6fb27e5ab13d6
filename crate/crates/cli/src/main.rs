fn main() {
    std::process::exit(ura_cli::run(std::env::args_os()));
}
