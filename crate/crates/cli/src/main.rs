fn main() {
    std::process::exit(ruledfs_cli::run(std::env::args_os()));
}
