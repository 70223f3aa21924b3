fn main() {
    std::process::exit(spherical_mmd::cli::run(std::env::args_os()));
}
