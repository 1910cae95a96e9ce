fn main() {
    std::process::exit(egomwf::cli::run(std::env::args_os()));
}
