fn main() {
    std::process::exit(adaptseg::cli::run(std::env::args_os()));
}
