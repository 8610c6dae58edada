fn main() {
    std::process::exit(revmem::cli::run_main(std::env::args_os()));
}
