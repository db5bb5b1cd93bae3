//! CSV and JSON serialization of summary tables.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde_json::json;

use crate::error::{Error, Result};
use crate::experiments::{SummaryRow, SummaryTable};

pub const CSV_HEADER: &str = "metric,layer_or_width,mean,std,count";
const CONFIG_PREFIX: &str = "# config: ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::invalid(format!("unknown format `{other}`"))),
        }
    }
}

/// Where and how a result is written. `path = None` means stdout.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Format,
    /// Replace an existing file; when false an existing file is an error.
    pub overwrite: bool,
}

impl OutputSpec {
    /// Writes `contents` to the file, or returns it for stdout.
    pub fn emit(&self, contents: &str, stdout: &mut dyn std::io::Write) -> Result<()> {
        match &self.path {
            None => stdout.write_all(contents.as_bytes())?,
            Some(path) => {
                let mut file = OpenOptions::new()
                    .write(true)
                    .create(true)
                    .create_new(!self.overwrite)
                    .truncate(true)
                    .open(path)?;
                file.write_all(contents.as_bytes())?;
            }
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn header_json(table: &SummaryTable) -> serde_json::Value {
    json!({
        "experiment": table.name,
        "seed": table.seed,
        "config": table.config,
    })
}

fn check_metric(metric: &str) -> Result<()> {
    if metric.contains([',', '\n', '"']) {
        return Err(Error::invalid(format!(
            "metric name `{metric}` cannot be written as CSV"
        )));
    }
    Ok(())
}

/// `# config: {...}` line, header, then one line per row.
pub fn format_csv(table: &SummaryTable) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{CONFIG_PREFIX}{}", serde_json::to_string(&header_json(table))?).unwrap();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in &table.rows {
        check_metric(&r.metric)?;
        writeln!(
            out,
            "{},{},{},{},{}",
            r.metric,
            r.layer_or_width,
            format_number(r.mean),
            format_number(r.std),
            r.count
        )
        .unwrap();
    }
    Ok(out)
}

fn parse_field<T: FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {what} `{field}`")))
}

/// Inverse of [`format_csv`].
pub fn parse_csv(text: &str) -> Result<SummaryTable> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty input".into()))?;
    let meta = first
        .strip_prefix(CONFIG_PREFIX)
        .ok_or_else(|| Error::Parse("missing `# config:` line".into()))?;
    let meta: serde_json::Value = serde_json::from_str(meta)?;
    let name = meta["experiment"]
        .as_str()
        .ok_or_else(|| Error::Parse("config line lacks `experiment`".into()))?;
    let seed = meta["seed"]
        .as_u64()
        .ok_or_else(|| Error::Parse("config line lacks `seed`".into()))?;
    let mut table = SummaryTable::new(name, seed, meta["config"].clone());
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse("missing or wrong header".into()));
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 3;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected 5 fields, got {}",
                fields.len()
            )));
        }
        table.push(SummaryRow {
            metric: fields[0].to_string(),
            layer_or_width: parse_field(fields[1], "layer_or_width", line_no)?,
            mean: parse_field(fields[2], "mean", line_no)?,
            std: parse_field(fields[3], "std", line_no)?,
            count: parse_field(fields[4], "count", line_no)?,
        });
    }
    Ok(table)
}

fn json_number(v: f64) -> String {
    if v.is_finite() {
        format_number(v)
    } else {
        "null".into()
    }
}

/// The CSV content as a JSON document; non-finite numbers become `null`.
pub fn format_json(table: &SummaryTable) -> Result<String> {
    let mut out = String::from("{\n");
    writeln!(out, "  \"experiment\": {},", serde_json::to_string(&table.name)?).unwrap();
    writeln!(out, "  \"seed\": {},", table.seed).unwrap();
    writeln!(out, "  \"config\": {},", serde_json::to_string(&table.config)?).unwrap();
    out.push_str("  \"rows\": [");
    for (i, r) in table.rows.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        write!(
            out,
            "    {{\"metric\": {}, \"layer_or_width\": {}, \"mean\": {}, \"std\": {}, \"count\": {}}}",
            serde_json::to_string(&r.metric)?,
            r.layer_or_width,
            json_number(r.mean),
            json_number(r.std),
            r.count
        )
        .unwrap();
    }
    out.push_str(if table.rows.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
    Ok(out)
}

/// Serializes the table in `spec.format` and writes it. SVG goes through
/// [`super::svg::render_svg`] with default labels.
pub fn write_table(table: &SummaryTable, spec: &OutputSpec, stdout: &mut dyn std::io::Write) -> Result<()> {
    let text = match spec.format {
        Format::Csv => format_csv(table)?,
        Format::Json => format_json(table)?,
        Format::Svg => super::svg::render_svg(table, &super::svg::PlotSpec::for_table(table))?,
    };
    spec.emit(&text, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Stats;

    fn table() -> SummaryTable {
        let mut t = SummaryTable::new("demo", 7, json!({"depth": 3, "delta": 0.05}));
        t.push(SummaryRow::new(
            "act_ratio/he_n100",
            1,
            Stats {
                mean: 1.0,
                std: 0.01,
                count: 2000,
            },
        ));
        t.push(SummaryRow::point("grad_ratio/x", 2, 0.1 + 0.2, 5));
        t
    }

    #[test]
    fn number_format_round_trips() {
        for v in [0.1 + 0.2, 1.0, -3.5e-300, 1e300, f64::MIN_POSITIVE, 123_456.789] {
            let s = format_number(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert_eq!(format_number(s.parse().unwrap()), s);
        }
        assert_eq!(format_number(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let text = format_csv(&table()).unwrap();
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, table());
        assert_eq!(format_csv(&back).unwrap(), text);
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = SummaryTable::new("empty", 0, json!({}));
        let text = format_csv(&t).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# config: "));
        assert_eq!(lines[1], CSV_HEADER);
        assert!(parse_csv(&text).unwrap().rows.is_empty());
        let v: serde_json::Value = serde_json::from_str(&format_json(&t).unwrap()).unwrap();
        assert_eq!(v["rows"], json!([]));
    }

    #[test]
    fn json_mirrors_csv() {
        let v: serde_json::Value = serde_json::from_str(&format_json(&table()).unwrap()).unwrap();
        assert_eq!(v["experiment"], "demo");
        assert_eq!(v["config"]["depth"], 3);
        assert_eq!(v["rows"][0]["metric"], "act_ratio/he_n100");
        assert_eq!(v["rows"][0]["count"], 2000);
        assert_eq!(v["rows"][1]["mean"].as_f64().unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("metric,layer_or_width,mean,std,count\n").is_err());
        let mut t = table();
        t.rows[0].metric = "a,b".into();
        assert!(format_csv(&t).is_err());
        let text = format_csv(&table()).unwrap().replace("2000", "x");
        assert!(matches!(parse_csv(&text), Err(Error::Parse(_))));
    }
}
