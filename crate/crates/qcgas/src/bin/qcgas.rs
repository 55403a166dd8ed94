fn main() {
    std::process::exit(qcgas::cli::run(std::env::args().skip(1)));
}
