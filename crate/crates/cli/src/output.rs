use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// A command's result: a JSON document and a CSV table rendered up front.
pub struct Output {
    pub json: Value,
    pub csv: Vec<u8>,
}

impl Output {
    pub fn new<J: Serialize>(json: &J, csv: Vec<u8>) -> Result<Output, CliError> {
        Ok(Output {
            json: serde_json::to_value(json).map_err(qrcov::Error::from)?,
            csv,
        })
    }

    pub fn emit(&self, out: Option<&Path>) -> Result<(), CliError> {
        match out {
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                self.write_json(&mut lock)?;
                Ok(())
            }
            Some(path) => {
                let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(qrcov::Error::from)?);
                if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                    file.write_all(&self.csv).map_err(qrcov::Error::from)?;
                } else {
                    self.write_json(&mut file)?;
                }
                file.flush().map_err(qrcov::Error::from)?;
                Ok(())
            }
        }
    }

    fn write_json<W: Write>(&self, w: &mut W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(&mut *w, &self.json).map_err(qrcov::Error::from)?;
        writeln!(w).map_err(qrcov::Error::from)?;
        Ok(())
    }
}

pub fn csv_table<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(qrcov::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Core(qrcov::Error::from(e.into_error())))
}

/// Two-column key,value table of the top-level scalars of a JSON object.
pub fn csv_key_values(json: &Value) -> Result<Vec<u8>, CliError> {
    #[derive(Serialize)]
    struct Kv<'a> {
        key: &'a str,
        value: String,
    }
    let rows: Vec<Kv> = match json {
        Value::Object(map) => map
            .iter()
            .filter(|(_, v)| !v.is_object() && !v.is_array())
            .map(|(k, v)| Kv {
                key: k,
                value: match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                },
            })
            .collect(),
        _ => Vec::new(),
    };
    csv_table(&rows)
}
