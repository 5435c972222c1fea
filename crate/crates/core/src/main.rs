fn main() {
    std::process::exit(movecalc::cli::run(std::env::args_os()));
}
