fn main() {
    // Placeholder until the command-line interface module lands.
    eprintln!("synthon: command-line interface not built yet");
    std::process::exit(2);
}
