use clap::Parser;

fn main() {
    let cli = adx_cli::Cli::parse();
    let result = adx_cli::run(&cli.command);
    match &result {
        Ok(s) => {
            for f in &s.files {
                println!("{}", f.display());
            }
            if !s.passed {
                eprintln!("verification found violations; see report.txt");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(adx_cli::exit_code(&result));
}
