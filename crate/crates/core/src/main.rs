fn main() {
    match uae::cli::run(std::env::args_os()) {
        Ok(text) => print!("{text}"),
        Err(uae::Error::Usage(text)) => {
            eprint!("{text}");
            std::process::exit(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
