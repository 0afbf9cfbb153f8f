fn main() {
    std::process::exit(gridmpc::cli::run(std::env::args_os()));
}
