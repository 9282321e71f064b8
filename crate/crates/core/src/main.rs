fn main() {
    std::process::exit(liesym::cli::main_entry());
}
