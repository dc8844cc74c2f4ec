fn main() {
    std::process::exit(lehgr::cli::run(std::env::args_os()));
}
