use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(qrcov::Error),
}

impl From<qrcov::Error> for CliError {
    fn from(e: qrcov::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Serialize)]
struct Report<'a> {
    code: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => core_exit_code(e),
        }
    }

    fn code(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "non_convergence",
            _ => "data",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }

    /// One JSON object on stderr so scripts can dispatch on `code`.
    pub fn report(&self) {
        let r = Report {
            code: self.code(),
            exit_code: self.exit_code(),
            message: self.message(),
        };
        eprintln!("{}", serde_json::json!({ "error": r }));
    }
}

fn core_exit_code(e: &qrcov::Error) -> i32 {
    use qrcov::Error::*;
    if e.is_convergence_failure() {
        return 3;
    }
    match e {
        // argument values outside their domain are usage errors
        Domain(_) => 2,
        Refit { source, .. } => core_exit_code(source),
        _ => 4,
    }
}
