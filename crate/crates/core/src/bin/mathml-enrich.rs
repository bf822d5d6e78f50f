fn main() {
    std::process::exit(mathml_enrich::cli::run(std::env::args_os()));
}
