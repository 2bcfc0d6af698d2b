//! File formats: patient CSV, risk-model TOML and chart-series CSV.
//!
//! Patient files carry the header
//! `hospital_id,patient_id,entry_day,followup_days,event,z1,...,zp`, with
//! `event` coded 0/1 and any number of trailing covariate columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::charts::{ChartPoint, ChartSeries, ChartSpec};
use crate::error::{Error, Result};
use crate::model::{PatientRecord, RiskModel};

const PATIENT_COLUMNS: [&str; 5] = ["hospital_id", "patient_id", "entry_day", "followup_days", "event"];

/// Records of one hospital, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct HospitalRecords {
    pub hospital: String,
    pub records: Vec<PatientRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientTable {
    pub covariate_names: Vec<String>,
    /// Sorted by hospital id.
    pub hospitals: Vec<HospitalRecords>,
}

impl PatientTable {
    pub fn all_records(&self) -> impl Iterator<Item = &PatientRecord> {
        self.hospitals.iter().flat_map(|h| h.records.iter())
    }

    /// Largest exit time in the table, a natural default horizon.
    pub fn last_exit(&self) -> f64 {
        self.all_records().map(PatientRecord::exit_time).fold(0.0, f64::max)
    }
}

pub fn read_patients(reader: impl Read) -> Result<PatientTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let found: Vec<&str> = header.iter().take(PATIENT_COLUMNS.len()).collect();
    if found != PATIENT_COLUMNS {
        return Err(Error::Schema(format!(
            "patient CSV must start with columns {}, found {}",
            PATIENT_COLUMNS.join(","),
            found.join(",")
        )));
    }
    let covariate_names: Vec<String> = header.iter().skip(PATIENT_COLUMNS.len()).map(String::from).collect();
    let mut groups: BTreeMap<String, Vec<PatientRecord>> = BTreeMap::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let line = line + 2;
        let num = |col: usize| -> Result<f64> {
            row[col].parse::<f64>().map_err(|_| {
                Error::Schema(format!("line {line}: column `{}` is not a number: `{}`", &header[col], &row[col]))
            })
        };
        let event = match &row[4] {
            "0" => false,
            "1" => true,
            other => return Err(Error::Schema(format!("line {line}: event must be 0 or 1, got `{other}`"))),
        };
        let covariates = (PATIENT_COLUMNS.len()..row.len()).map(num).collect::<Result<Vec<_>>>()?;
        let rec = PatientRecord::new(&row[1], num(2)?, num(3)?, event, covariates)
            .map_err(|e| Error::Schema(format!("line {line}: {e}")))?;
        groups.entry(row[0].to_string()).or_default().push(rec);
    }
    Ok(PatientTable {
        covariate_names,
        hospitals: groups
            .into_iter()
            .map(|(hospital, records)| HospitalRecords { hospital, records })
            .collect(),
    })
}

pub fn write_patients(writer: impl Write, table: &PatientTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = PATIENT_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(table.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for h in &table.hospitals {
        for r in &h.records {
            let mut row = vec![
                h.hospital.clone(),
                r.id.clone(),
                r.entry_time.to_string(),
                r.followup.to_string(),
                u8::from(r.event).to_string(),
            ];
            row.extend(r.covariates.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_risk_model(text: &str) -> Result<RiskModel> {
    let m: RiskModel = toml::from_str(text)?;
    RiskModel::new(m.beta, m.baseline)
}

pub fn write_risk_model(model: &RiskModel) -> Result<String> {
    Ok(toml::to_string(model)?)
}

/// `time,value` rows.
pub fn write_series_csv(writer: impl Write, series: &ChartSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "value"])?;
    for p in &series.points {
        w.write_record([p.time.to_string(), p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(reader: impl Read, spec: ChartSpec) -> Result<ChartSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["time", "value"] {
        return Err(Error::Schema("series CSV must have columns time,value".into()));
    }
    let mut points = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Schema(format!("not a number: `{s}`")));
        points.push(ChartPoint::plain(parse(&row[0])?, parse(&row[1])?));
    }
    Ok(ChartSeries { spec, points })
}
