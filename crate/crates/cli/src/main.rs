fn main() {
    std::process::exit(sec2sec_cli::run(std::env::args_os()));
}
