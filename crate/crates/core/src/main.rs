fn main() {
    std::process::exit(reqa::cli::run(std::env::args_os()));
}
