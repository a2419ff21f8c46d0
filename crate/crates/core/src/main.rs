fn main() {
    std::process::exit(ensrec::cli::run(std::env::args_os()));
}
