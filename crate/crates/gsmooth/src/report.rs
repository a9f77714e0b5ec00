//! CSV reports (RFC 4180 via the `csv` crate).

use std::path::Path;

use gsmooth_core::attack::AttackResult;
use gsmooth_core::certify::CertificationRecord;

use crate::error::{Error, Result};

pub const CERT_COLUMNS: [&str; 9] =
    ["sample_id", "label", "prediction", "p_a_lower", "m_star", "radius", "radius_corrected", "abstain", "seconds"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.into(), source }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// Writes a header and rows of already formatted fields.
pub fn write_rows<S: AsRef<str>>(path: &Path, header: &[S], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records(path: &Path, records: &[CertificationRecord]) -> Result<()> {
    write_rows(
        path,
        &CERT_COLUMNS,
        records.iter().map(|r| {
            vec![
                r.sample_id.to_string(),
                r.label.to_string(),
                r.prediction.to_string(),
                r.p_a_lower.to_string(),
                r.m_star.to_string(),
                r.radius.to_string(),
                r.radius_corrected.to_string(),
                u8::from(r.abstained).to_string(),
                format!("{:.6}", r.seconds),
            ]
        }),
    )
}

pub fn read_records(path: &Path) -> Result<Vec<CertificationRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rd.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(CERT_COLUMNS) {
        return Err(Error::format("certification CSV", 0, format!("header is `{}`, expected `{}`", header.iter().collect::<Vec<_>>().join(","), CERT_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err(path))?;
        let offset = row.position().map_or(0, |p| p.byte() as usize);
        let field = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|_| Error::format("certification CSV", offset, format!("column {} is `{}`", CERT_COLUMNS[i], &row[i])))
        };
        out.push(CertificationRecord {
            sample_id: field(0)? as usize,
            label: field(1)? as usize,
            prediction: field(2)? as usize,
            p_a_lower: field(3)?,
            m_star: field(4)?,
            radius: field(5)?,
            radius_corrected: field(6)?,
            abstained: field(7)? != 0.0,
            seconds: field(8)?,
        });
    }
    Ok(out)
}

pub fn write_attacks(path: &Path, results: &[AttackResult]) -> Result<()> {
    let m = results.first().map_or(0, |r| r.xi_adv.len());
    let mut header = vec!["sample_id".to_string(), "budget".into()];
    header.extend((0..m).map(|i| format!("xi_adv_{i}")));
    header.extend(["success".into(), "loss_final".into()]);
    write_rows(
        path,
        &header,
        results.iter().map(|r| {
            let mut row = vec![r.sample_id.to_string(), r.budget.to_string()];
            row.extend(r.xi_adv.iter().map(|x| x.to_string()));
            row.extend([u8::from(r.success).to_string(), r.loss_final.to_string()]);
            row
        }),
    )
}

pub fn write_accuracy(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    write_rows(path, &["radius", "certified_accuracy"], rows.iter().map(|(r, a)| vec![r.to_string(), a.to_string()]))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    crate::error::write(path, format!("{text}\n").as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&crate::error::read(path)?).map_err(|source| Error::Json { path: path.into(), source })
}
