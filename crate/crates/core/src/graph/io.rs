//! Plain-text dataset formats: JSON Lines action logs and CSV feature and
//! label tables.

use std::io::{BufRead, BufReader, Read, Write};

use super::records::ActionRecord;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn read_actions<R: Read>(r: R) -> Result<Vec<ActionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ActionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Validation { index: i, reason: format!("bad action line: {e}") })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_actions<W: Write>(mut w: W, actions: &[ActionRecord]) -> Result<()> {
    for a in actions {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `id, f_1, …, f_k` rows. Ids must be exactly `0..rows` in order.
pub fn read_features<R: Read>(r: R) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut vals = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id: usize = parse(&rec[0], i)?;
        if id != i {
            return Err(Error::Validation { index: i, reason: format!("expected id {i}, found {id}") });
        }
        let k = rec.len() - 1;
        if *width.get_or_insert(k) != k {
            return Err(Error::Validation { index: i, reason: format!("row has {k} features, expected {}", width.unwrap()) });
        }
        for f in rec.iter().skip(1) {
            vals.push(parse::<f64>(f, i)?);
        }
        rows += 1;
    }
    Tensor::matrix(rows, width.unwrap_or(0), vals)
}

pub fn write_features<W: Write>(w: W, features: &Tensor) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..features.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(features.row(i).iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `(user_id, label)` rows into a dense vector of length `m`.
pub fn read_labels<R: Read>(r: R, m: usize) -> Result<Vec<u8>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut out = vec![None; m];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let u: usize = parse(&rec[0], i)?;
        let y: u8 = parse(rec.get(1).unwrap_or(""), i)?;
        if u >= m || y > 1 {
            return Err(Error::Validation { index: i, reason: format!("bad label row ({u}, {y})") });
        }
        out[u] = Some(y);
    }
    out.into_iter()
        .enumerate()
        .map(|(u, y)| y.ok_or_else(|| Error::Validation { index: u, reason: format!("user {u} has no label") }))
        .collect()
}

pub fn write_labels<W: Write>(w: W, labels: &[u8]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for (u, y) in labels.iter().enumerate() {
        wtr.write_record([u.to_string(), y.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, index: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim()
        .parse()
        .map_err(|e| Error::Validation { index, reason: format!("cannot parse '{s}': {e}") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actions_round_trip() {
        let acts = vec![ActionRecord::new(0, 3, 10), ActionRecord::new(2, 1, 7)];
        let mut buf = Vec::new();
        write_actions(&mut buf, &acts).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().next().unwrap(), r#"{"user":0,"item":3,"ts":10}"#);
        assert_eq!(read_actions(&buf[..]).unwrap(), acts);
    }

    #[test]
    fn features_round_trip_exactly() {
        let f = Tensor::from_rows(&[vec![0.1, -2.5e-7], vec![1.0 / 3.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert_eq!(read_features(&buf[..]).unwrap(), f);
    }

    #[test]
    fn labels_round_trip_and_validate() {
        let mut buf = Vec::new();
        write_labels(&mut buf, &[0, 1, 1]).unwrap();
        assert_eq!(read_labels(&buf[..], 3).unwrap(), vec![0, 1, 1]);
        assert!(read_labels(&buf[..], 4).is_err());
        assert!(read_labels("0,2\n".as_bytes(), 1).is_err());
    }

    #[test]
    fn malformed_action_cites_line() {
        match read_actions("{\"user\":0,\"item\":0,\"ts\":0}\nnot json\n".as_bytes()) {
            Err(Error::Validation { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
