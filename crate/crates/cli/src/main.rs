fn main() {
    if let Ok(v) = std::env::var("PTSTAB_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(t) => ptstab_core::par::init_threads(t),
            Err(_) => {
                eprintln!("PTSTAB_THREADS must be a non-negative integer, got {v:?}");
                std::process::exit(1);
            }
        }
    }
    std::process::exit(ptstab_cli::run(std::env::args_os()));
}
