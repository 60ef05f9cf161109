fn main() {
    std::process::exit(smtpcps::cli::run());
}
