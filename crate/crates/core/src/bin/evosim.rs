fn main() {
    std::process::exit(evosim_core::report::cli_main(std::env::args_os()));
}
