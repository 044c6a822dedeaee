//! Price series ingestion and log-returns.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::CliError;

/// Daily prices with strictly increasing dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Reads a `date,price` CSV. Rows may come in any order; the result is
/// sorted by date.
pub fn load_prices(path: &Path) -> Result<PriceSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_prices(&text)
}

pub fn parse_prices(text: &str) -> Result<PriceSeries, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse_error(1, e.to_string()))?;
    if header.len() != 2 || &header[0] != "date" || &header[1] != "price" {
        return Err(parse_error(1, format!("expected header `date,price`, found `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_error(line, format!("expected 2 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| parse_error(line, format!("bad date `{}`: {e}", &record[0])))?;
        let price: f64 = record[1]
            .parse()
            .map_err(|_| parse_error(line, format!("bad price `{}`", &record[1])))?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(CliError::Data(format!("line {line}: price must be positive and finite, got {price}")));
        }
        rows.push((date, price, line));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::Data(format!(
            "duplicate date {} on lines {} and {}",
            w[0].0, w[0].2, w[1].2
        )));
    }
    Ok(PriceSeries {
        dates: rows.iter().map(|r| r.0).collect(),
        prices: rows.iter().map(|r| r.1).collect(),
    })
}

fn parse_error(line: usize, message: String) -> CliError {
    CliError::Parse { line, message }
}

/// Percentage log-returns `100 ln(s_t / s_{t-1})`.
pub fn log_returns(series: &PriceSeries) -> Result<Vec<f64>, CliError> {
    if series.len() < 2 {
        return Err(CliError::Config(format!(
            "need at least 2 prices for log-returns, got {}",
            series.len()
        )));
    }
    Ok(series.prices.windows(2).map(|w| 100.0 * (w[1] / w[0]).ln()).collect())
}
