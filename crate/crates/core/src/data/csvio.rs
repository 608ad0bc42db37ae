//! CSV ingestion and export.
//!
//! Dialect: header row, comma separated, UTF-8, empty cell = missing,
//! ISO 8601 dates.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    date_to_value, value_to_date, Arm, DataError, Dataset, OutcomeKind, Schema, SourceInfo, SourceTag,
    SubjectRecord, Variable, VariableKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateMapping {
    pub column: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

/// Maps CSV columns onto record fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub id: String,
    pub treatment: String,
    pub delta: String,
    pub outcome: String,
    #[serde(default)]
    pub outcome_kind: OutcomeKind,
    #[serde(default)]
    pub covariates: Vec<CovariateMapping>,
    /// Column holding the source label; when absent every row gets
    /// `source_label`.
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default = "default_source_label")]
    pub source_label: String,
    /// Column holding a 0/1 external flag; when absent every row gets
    /// `external`.
    #[serde(default)]
    pub external_column: Option<String>,
    #[serde(default)]
    pub external: bool,
    #[serde(default)]
    pub index_date: Option<String>,
    #[serde(default)]
    pub eligibility_date: Option<String>,
    #[serde(default)]
    pub end_date: Option<String>,
    #[serde(default)]
    pub provenance: Vec<SourceInfo>,
}

fn default_source_label() -> String {
    "source".to_string()
}

impl ColumnMapping {
    /// Mapping for files written by [`write_csv`].
    pub fn for_export(ds: &Dataset) -> Self {
        ColumnMapping {
            id: "id".into(),
            treatment: "treatment".into(),
            delta: "delta".into(),
            outcome: "outcome".into(),
            outcome_kind: ds.outcome_kind(),
            covariates: ds
                .schema()
                .variables()
                .iter()
                .map(|v| CovariateMapping { column: v.name.clone(), kind: v.kind.clone() })
                .collect(),
            source: Some("source".into()),
            source_label: default_source_label(),
            external_column: Some("external".into()),
            external: false,
            index_date: Some("index_date".into()),
            eligibility_date: Some("eligibility_date".into()),
            end_date: Some("end_date".into()),
            provenance: ds.provenance().to_vec(),
        }
    }
}

/// Reads a CSV file into a [`Dataset`].
pub fn ingest_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(DataError::FileNotFound(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(e.to_string()))?;
    read_csv(file, mapping)
}

/// Reads CSV from any reader.
pub fn read_csv(reader: impl Read, mapping: &ColumnMapping) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Io(e.to_string()))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| index.get(name).copied().ok_or_else(|| DataError::SchemaMismatch(name.to_string()));
    let opt_col = |name: &Option<String>| name.as_deref().map(col).transpose();

    let id_c = col(&mapping.id)?;
    let trt_c = col(&mapping.treatment)?;
    let delta_c = col(&mapping.delta)?;
    let y_c = col(&mapping.outcome)?;
    let src_c = opt_col(&mapping.source)?;
    let ext_c = opt_col(&mapping.external_column)?;
    let idx_c = opt_col(&mapping.index_date)?;
    let elig_c = opt_col(&mapping.eligibility_date)?;
    let end_c = opt_col(&mapping.end_date)?;
    let cov_c: Vec<usize> = mapping.covariates.iter().map(|c| col(&c.column)).collect::<Result<_, _>>()?;

    let schema = Schema::new(
        mapping
            .covariates
            .iter()
            .map(|c| Variable { name: c.column.clone(), kind: c.kind.clone() })
            .collect(),
    );

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = row.map_err(|e| DataError::Io(e.to_string()))?;
        let cell = |c: usize| row.get(c).unwrap_or("");
        let err = |column: &str, value: &str| DataError::ParseError {
            row: line,
            column: column.to_string(),
            value: value.to_string(),
        };
        let flag = |c: usize, column: &str| -> Result<bool, DataError> {
            match cell(c) {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(err(column, v)),
            }
        };
        let date = |c: Option<usize>, column: &Option<String>| -> Result<Option<NaiveDate>, DataError> {
            match c.map(cell) {
                None | Some("") => Ok(None),
                Some(v) => NaiveDate::parse_from_str(v, "%Y-%m-%d")
                    .map(Some)
                    .map_err(|_| err(column.as_deref().unwrap_or(""), v)),
            }
        };

        let treatment = Arm::from_flag(flag(trt_c, "treatment")?);
        let observed = flag(delta_c, "delta")?;
        let outcome = match cell(y_c) {
            "" if observed => return Err(err("outcome", "")),
            "" => None,
            v => {
                let y: f64 = v.parse().map_err(|_| err("outcome", v))?;
                if mapping.outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
                    return Err(err("outcome", v));
                }
                Some(y)
            }
        };

        let mut covariates = Vec::with_capacity(schema.arity());
        for (m, &c) in mapping.covariates.iter().zip(&cov_c) {
            let v = cell(c);
            match &m.kind {
                VariableKind::Real => covariates.push(if v.is_empty() {
                    None
                } else {
                    Some(v.parse::<f64>().map_err(|_| err(&m.column, v))?)
                }),
                VariableKind::Binary => covariates.push(match v {
                    "" => None,
                    "0" => Some(0.0),
                    "1" => Some(1.0),
                    _ => return Err(err(&m.column, v)),
                }),
                VariableKind::Date => covariates.push(if v.is_empty() {
                    None
                } else {
                    Some(date_to_value(
                        NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|_| err(&m.column, v))?,
                    ))
                }),
                VariableKind::Categorical { levels } => {
                    if v.is_empty() {
                        covariates.extend(std::iter::repeat_n(None, levels.len().saturating_sub(1)));
                    } else {
                        let pos = levels.iter().position(|l| l == v).ok_or_else(|| err(&m.column, v))?;
                        covariates.extend((1..levels.len()).map(|k| Some(if k == pos { 1.0 } else { 0.0 })));
                    }
                }
            }
        }

        let label = match src_c {
            Some(c) if !cell(c).is_empty() => cell(c).to_string(),
            _ => mapping.source_label.clone(),
        };
        let external = match ext_c {
            Some(c) => flag(c, "external")?,
            None => mapping.external,
        };

        let mut r = SubjectRecord::new(
            cell(id_c).to_string(),
            covariates,
            treatment,
            observed,
            outcome,
            SourceTag { label, external },
        );
        r.index_date = date(idx_c, &mapping.index_date)?;
        r.eligibility_date = date(elig_c, &mapping.eligibility_date)?;
        r.end_date = date(end_c, &mapping.end_date)?;
        records.push(r);
    }
    Dataset::new(schema, mapping.outcome_kind, records, mapping.provenance.clone())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_date(d: Option<NaiveDate>) -> String {
    d.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default()
}

/// Writes `ds` in the ingestion dialect; [`ColumnMapping::for_export`] reads
/// it back. Stored outcomes are written as-is.
pub fn write_csv(ds: &Dataset, writer: impl Write) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> =
        ["id", "source", "external", "treatment", "delta", "outcome", "index_date", "eligibility_date", "end_date"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    header.extend(ds.schema().variables().iter().map(|v| v.name.clone()));
    w.write_record(&header).map_err(io)?;

    for r in ds.records() {
        let mut row = vec![
            r.id.clone(),
            r.source.label.clone(),
            (r.source.external as u8).to_string(),
            (r.treatment.is_treated() as u8).to_string(),
            (r.observed as u8).to_string(),
            fmt_opt(r.stored_outcome()),
            fmt_date(r.index_date),
            fmt_date(r.eligibility_date),
            fmt_date(r.end_date),
        ];
        let mut k = 0;
        for v in ds.schema().variables() {
            match &v.kind {
                VariableKind::Real | VariableKind::Binary => {
                    row.push(fmt_opt(r.covariates[k]));
                    k += 1;
                }
                VariableKind::Date => {
                    row.push(fmt_date(r.covariates[k].and_then(value_to_date)));
                    k += 1;
                }
                VariableKind::Categorical { levels } => {
                    let width = levels.len().saturating_sub(1);
                    let cells = &r.covariates[k..k + width];
                    let text = if cells.iter().any(|c| c.is_none()) {
                        String::new()
                    } else {
                        match cells.iter().position(|c| *c == Some(1.0)) {
                            Some(p) => levels[p + 1].clone(),
                            None => levels[0].clone(),
                        }
                    };
                    row.push(text);
                    k += width;
                }
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

/// Writes `ds` to `path`.
pub fn export_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| DataError::Io(e.to_string()))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping {
            id: "id".into(),
            treatment: "trt".into(),
            delta: "obs".into(),
            outcome: "resp".into(),
            outcome_kind: OutcomeKind::Binary,
            covariates: vec![
                CovariateMapping { column: "age".into(), kind: VariableKind::Real },
                CovariateMapping {
                    column: "stage".into(),
                    kind: VariableKind::Categorical { levels: vec!["I".into(), "II".into(), "III".into()] },
                },
            ],
            source: None,
            source_label: "registry".into(),
            external_column: None,
            external: true,
            index_date: Some("start".into()),
            eligibility_date: None,
            end_date: None,
            provenance: vec![],
        }
    }

    const FOUR_ROWS: &str = "id,trt,obs,resp,age,stage,start\n\
        1,0,1,1,54,I,2019-01-03\n\
        2,0,1,0,61,III,2019-02-11\n\
        3,1,0,,,II,2019-03-30\n\
        4,1,1,1,47,,\n";

    #[test]
    fn ingests_four_rows() {
        let ds = read_csv(FOUR_ROWS.as_bytes(), &mapping()).unwrap();
        assert_eq!(ds.len(), 4);
        let names: Vec<_> = ds.schema().columns().iter().map(|c| c.name.clone()).collect();
        assert_eq!(names, ["age", "stage=II", "stage=III"]);
        assert_eq!(ds.records()[1].covariates, vec![Some(61.0), Some(0.0), Some(1.0)]);
        assert_eq!(ds.records()[2].covariates, vec![None, Some(1.0), Some(0.0)]);
        assert_eq!(ds.records()[3].covariates, vec![Some(47.0), None, None]);
        assert_eq!(ds.records()[2].outcome(), None);
        assert!(ds.records()[0].source.external);
        assert_eq!(ds.records()[0].index_date, NaiveDate::from_ymd_opt(2019, 1, 3));
    }

    #[test]
    fn bad_treatment_value() {
        let text = FOUR_ROWS.replace("3,1,0", "3,2,0");
        assert_eq!(
            read_csv(text.as_bytes(), &mapping()),
            Err(DataError::ParseError { row: 4, column: "treatment".into(), value: "2".into() })
        );
    }

    #[test]
    fn absent_column() {
        let mut m = mapping();
        m.covariates[0].column = "weight".into();
        assert_eq!(read_csv(FOUR_ROWS.as_bytes(), &m), Err(DataError::SchemaMismatch("weight".into())));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(ingest_csv("/nonexistent/x.csv", &mapping()), Err(DataError::FileNotFound(_))));
    }

    #[test]
    fn roundtrip_through_file() {
        let ds = read_csv(FOUR_ROWS.as_bytes(), &mapping()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        export_csv(&ds, &p).unwrap();
        let back = ingest_csv(&p, &ColumnMapping::for_export(&ds)).unwrap();
        assert_eq!(back, ds);
    }

    fn arb_record(i: usize) -> impl Strategy<Value = SubjectRecord> {
        (
            prop::option::of(-1e6f64..1e6),
            prop::option::of(0usize..3),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            prop::option::of(0i64..20000),
        )
            .prop_map(move |(age, stage, trt, obs, y, day)| {
                let stage_cells = match stage {
                    None => vec![None, None],
                    Some(s) => (1..3).map(|k| Some(if k == s { 1.0 } else { 0.0 })).collect(),
                };
                let mut cov = vec![age];
                cov.extend(stage_cells);
                let mut r = SubjectRecord::new(
                    format!("s{i}"),
                    cov,
                    Arm::from_flag(trt),
                    obs,
                    if obs { Some(y as u8 as f64) } else { None },
                    SourceTag { label: if i % 2 == 0 { "a".into() } else { "b".into() }, external: i % 2 == 0 },
                );
                r.index_date = day.map(|d| value_to_date(d as f64).unwrap());
                r
            })
    }

    proptest! {
        #[test]
        fn export_ingest_roundtrip(recs in (1usize..12).prop_flat_map(|n| (0..n).map(arb_record).collect::<Vec<_>>())) {
            let ds = Dataset::new(Schema::new(vec![
                Variable { name: "age".into(), kind: VariableKind::Real },
                Variable { name: "stage".into(), kind: VariableKind::Categorical { levels: vec!["I".into(), "II".into(), "III".into()] } },
            ]), OutcomeKind::Binary, recs, vec![]).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), &ColumnMapping::for_export(&ds)).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
