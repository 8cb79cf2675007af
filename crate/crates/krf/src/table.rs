//! Delimited-table and artifact file I/O.
//!
//! Every table is comma-separated UTF-8 with LF line endings, a mandatory
//! header row, '.' as the decimal radix, and `#`-prefixed comment lines.
//! Outputs start with a `# seed = N` comment so each artifact records the
//! master seed that produced it. Floats are written in Rust's shortest
//! round-trip form, which keeps reruns byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{KrfError, Result};
use crate::fusion::KrfPrediction;
use crate::preprocess::{BqClass, GroundVector, OperatingRecord};

pub const TELEMETRY_COLUMNS: [&str; 10] = [
    "chainage_m",
    "timestamp_s",
    "Th_MN",
    "v_mm_min",
    "To_MNm",
    "RPM",
    "Pe_mm_r",
    "Cp_bar",
    "Vf_L",
    "Vw_L",
];

pub const LABEL_COLUMNS: [&str; 6] = ["f_I", "f_II", "f_III", "f_IV", "f_V", "f_VI"];

/// Write a file atomically: write to a sibling temp file, then rename over
/// the target.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, contents).map_err(|e| KrfError::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| KrfError::io(path.display().to_string(), e))?;
    Ok(())
}

/// A parsed delimited table: header names plus string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub path: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<RawTable> {
        let text =
            fs::read_to_string(path).map_err(|e| KrfError::io(path.display().to_string(), e))?;
        let display = path.display().to_string();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cells: Vec<String> = trimmed.split(',').map(|c| c.trim().to_string()).collect();
            match &columns {
                None => columns = Some(cells),
                Some(header) => {
                    if cells.len() != header.len() {
                        return Err(KrfError::Parse {
                            path: display,
                            line: line_no + 1,
                            message: format!(
                                "{} cells, header has {}",
                                cells.len(),
                                header.len()
                            ),
                        });
                    }
                    rows.push(cells);
                }
            }
        }
        let columns = columns.ok_or_else(|| KrfError::Parse {
            path: display.clone(),
            line: 0,
            message: "missing header row".into(),
        })?;
        Ok(RawTable {
            path: display,
            columns,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| KrfError::Parse {
                path: self.path.clone(),
                line: 1,
                message: format!("missing column '{name}'"),
            })
    }

    /// Columns not in the expected set; callers may warn about them.
    pub fn extra_columns(&self, expected: &[&str]) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| !expected.contains(&c.as_str()))
            .cloned()
            .collect()
    }

    pub fn parse_f64(&self, row: usize, col: usize) -> Result<f64> {
        self.rows[row][col].parse::<f64>().map_err(|_| KrfError::Parse {
            path: self.path.clone(),
            line: row + 2,
            message: format!(
                "'{}' in column '{}' is not a number",
                self.rows[row][col], self.columns[col]
            ),
        })
    }
}

fn push_f64(out: &mut String, v: f64) {
    // shortest round-trip formatting
    write!(out, "{v}").expect("string write");
}

#[derive(Debug, Clone)]
pub struct TelemetryTable {
    pub records: Vec<OperatingRecord>,
    pub labels: Option<Vec<GroundVector>>,
    pub extra_columns: Vec<String>,
}

pub fn write_telemetry(
    path: &Path,
    records: &[OperatingRecord],
    labels: Option<&[GroundVector]>,
    seed: u64,
) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != records.len() {
            return Err(KrfError::LengthMismatch(format!(
                "{} labels for {} records",
                labels.len(),
                records.len()
            )));
        }
    }
    let mut out = format!("# seed = {seed}\n");
    out.push_str(&TELEMETRY_COLUMNS.join(","));
    if labels.is_some() {
        out.push(',');
        out.push_str(&LABEL_COLUMNS.join(","));
    }
    out.push('\n');
    for (i, r) in records.iter().enumerate() {
        push_f64(&mut out, r.chainage);
        for v in [r.timestamp].iter().chain(r.features().iter()) {
            out.push(',');
            push_f64(&mut out, *v);
        }
        if let Some(labels) = labels {
            for f in labels[i].fractions() {
                out.push(',');
                push_f64(&mut out, *f);
            }
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

/// Read a telemetry table, with labels when all six fraction columns are
/// present. Records must be strictly ordered by chainage with timestamp
/// breaking ties.
pub fn read_telemetry(path: &Path) -> Result<TelemetryTable> {
    let table = RawTable::read(path)?;
    let idx: Vec<usize> = TELEMETRY_COLUMNS
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    let has_labels = LABEL_COLUMNS
        .iter()
        .all(|c| table.columns.iter().any(|x| x == c));
    let label_idx: Vec<usize> = if has_labels {
        LABEL_COLUMNS
            .iter()
            .map(|c| table.column_index(c))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut expected: Vec<&str> = TELEMETRY_COLUMNS.to_vec();
    expected.extend(LABEL_COLUMNS);
    let extra_columns = table.extra_columns(&expected);

    let mut records = Vec::with_capacity(table.rows.len());
    let mut labels = has_labels.then(Vec::new);
    for row in 0..table.rows.len() {
        let get = |k: usize| table.parse_f64(row, idx[k]);
        let record = OperatingRecord {
            chainage: get(0)?,
            timestamp: get(1)?,
            thrust: get(2)?,
            advance_rate: get(3)?,
            torque: get(4)?,
            cutter_speed: get(5)?,
            penetration: get(6)?,
            chamber_pressure: get(7)?,
            foam_volume: get(8)?,
            water_volume: get(9)?,
        };
        record.validate()?;
        if let Some(prev) = records.last() {
            let prev: &OperatingRecord = prev;
            let ordered = record.chainage > prev.chainage
                || (record.chainage == prev.chainage && record.timestamp > prev.timestamp);
            if !ordered {
                return Err(KrfError::Parse {
                    path: table.path.clone(),
                    line: row + 2,
                    message: format!(
                        "records out of order at chainage {}",
                        record.chainage
                    ),
                });
            }
        }
        records.push(record);
        if let Some(labels) = labels.as_mut() {
            let mut fractions = [0.0; 6];
            for (c, f) in fractions.iter_mut().enumerate() {
                *f = table.parse_f64(row, label_idx[c])?;
            }
            labels.push(GroundVector::new(fractions)?);
        }
    }
    Ok(TelemetryTable {
        records,
        labels,
        extra_columns,
    })
}

pub fn write_strata(path: &Path, rows: &[(f64, BqClass, f64)], seed: u64) -> Result<()> {
    let mut out = format!("# seed = {seed}\nchainage_m,class,thickness_m\n");
    for (chainage, class, thickness) in rows {
        push_f64(&mut out, *chainage);
        out.push(',');
        out.push_str(class.as_str());
        out.push(',');
        push_f64(&mut out, *thickness);
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn read_strata(path: &Path) -> Result<Vec<(f64, BqClass, f64)>> {
    let table = RawTable::read(path)?;
    let c_chainage = table.column_index("chainage_m")?;
    let c_class = table.column_index("class")?;
    let c_thickness = table.column_index("thickness_m")?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let class: BqClass = table.rows[row][c_class].parse()?;
        rows.push((
            table.parse_f64(row, c_chainage)?,
            class,
            table.parse_f64(row, c_thickness)?,
        ));
    }
    Ok(rows)
}

/// Group strata rows by chainage, preserving chainage order.
pub fn group_strata(rows: &[(f64, BqClass, f64)]) -> Vec<(f64, Vec<(BqClass, f64)>)> {
    let mut groups: Vec<(f64, Vec<(BqClass, f64)>)> = Vec::new();
    for &(chainage, class, thickness) in rows {
        match groups.last_mut() {
            Some((x, strata)) if *x == chainage => strata.push((class, thickness)),
            _ => groups.push((chainage, vec![(class, thickness)])),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite chainage"));
    groups
}

pub fn write_truth(path: &Path, rings: &[(f64, GroundVector)], seed: u64) -> Result<()> {
    let mut out = format!("# seed = {seed}\nchainage_m,main_class,{}\n", LABEL_COLUMNS.join(","));
    for (chainage, g) in rings {
        push_f64(&mut out, *chainage);
        out.push(',');
        out.push_str(g.main_class()?.as_str());
        for f in g.fractions() {
            out.push(',');
            push_f64(&mut out, *f);
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn write_samples(path: &Path, samples: &[(f64, f64)], seed: u64) -> Result<()> {
    let mut out = format!("# seed = {seed}\nchainage_m,value\n");
    for (x, v) in samples {
        push_f64(&mut out, *x);
        out.push(',');
        push_f64(&mut out, *v);
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let table = RawTable::read(path)?;
    let c_x = table.column_index("chainage_m")?;
    let c_v = table.column_index("value")?;
    (0..table.rows.len())
        .map(|row| Ok((table.parse_f64(row, c_x)?, table.parse_f64(row, c_v)?)))
        .collect()
}

pub fn write_predictions(path: &Path, predictions: &[KrfPrediction], seed: u64) -> Result<()> {
    let mut out = format!(
        "# seed = {seed}\nchainage_m,main_class,{},w_kriging_mean,var_kriging_mean,var_rf_mean\n",
        LABEL_COLUMNS.join(",")
    );
    for p in predictions {
        push_f64(&mut out, p.chainage);
        out.push(',');
        out.push_str(p.main.as_str());
        for f in p.fused.fractions() {
            out.push(',');
            push_f64(&mut out, *f);
        }
        for v in [p.mean_w_kriging(), p.mean_var_kriging(), p.mean_var_rf()] {
            out.push(',');
            push_f64(&mut out, v);
        }
        out.push('\n');
    }
    write_atomic(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub chainage: f64,
    pub main: BqClass,
    pub fractions: [f64; 6],
    pub w_kriging_mean: f64,
    pub var_kriging_mean: f64,
    pub var_rf_mean: f64,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let table = RawTable::read(path)?;
    let c_chainage = table.column_index("chainage_m")?;
    let c_main = table.column_index("main_class")?;
    let label_idx: Vec<usize> = LABEL_COLUMNS
        .iter()
        .map(|c| table.column_index(c))
        .collect::<Result<_>>()?;
    let c_w = table.column_index("w_kriging_mean")?;
    let c_vk = table.column_index("var_kriging_mean")?;
    let c_vr = table.column_index("var_rf_mean")?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in 0..table.rows.len() {
        let mut fractions = [0.0; 6];
        for (c, f) in fractions.iter_mut().enumerate() {
            *f = table.parse_f64(row, label_idx[c])?;
        }
        rows.push(PredictionRow {
            chainage: table.parse_f64(row, c_chainage)?,
            main: table.rows[row][c_main].parse()?,
            fractions,
            w_kriging_mean: table.parse_f64(row, c_w)?,
            var_kriging_mean: table.parse_f64(row, c_vk)?,
            var_rf_mean: table.parse_f64(row, c_vr)?,
        });
    }
    Ok(rows)
}
