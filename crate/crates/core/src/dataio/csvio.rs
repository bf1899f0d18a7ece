use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{CountingProcessDataset, CovariateSchema, CovariateSlot, DataError, Episode, Status, SubjectRecord};

const LONG_HEADER: [&str; 5] = ["id", "tstart", "tstop", "status", "treated"];
const WIDE_HEADER: [&str; 3] = ["id", "time", "status"];

/// Reads a counting-process CSV (long or wide layout) under `schema`.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<CountingProcessDataset, DataError> {
    read_csv(File::open(path)?, schema)
}

/// Like [`ingest_csv`], classifying every covariate column that is complete
/// and constant within each subject as baseline, the rest as time-varying.
pub fn ingest_csv_inferred(path: impl AsRef<Path>, time_unit: &str) -> Result<CountingProcessDataset, DataError> {
    let table = RawTable::read(File::open(path)?)?;
    let schema = table.infer_schema(time_unit);
    table.build(&schema)
}

pub fn read_csv(reader: impl Read, schema: &CovariateSchema) -> Result<CountingProcessDataset, DataError> {
    RawTable::read(reader)?.build(schema)
}

pub fn write_csv(ds: &CountingProcessDataset, writer: impl Write) -> Result<(), DataError> {
    let schema = ds.schema();
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = LONG_HEADER.iter().copied().chain(schema.names()).collect();
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for subject in ds.subjects() {
        for ep in &subject.episodes {
            record.clear();
            record.push(subject.id.clone());
            record.push(ep.tstart.to_string());
            record.push(ep.tstop.to_string());
            record.push(ep.status.code().to_string());
            record.push(u8::from(ep.treated).to_string());
            record.extend(subject.baseline.iter().map(f64::to_string));
            record.extend(ep.tv.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_path(ds: &CountingProcessDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_csv(ds, File::create(path)?)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layout {
    Long,
    Wide,
}

struct RawTable {
    layout: Layout,
    covariates: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn malformed(line: usize, reason: impl Into<String>) -> DataError {
    DataError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn parse_f64(line: usize, column: &str, text: &str) -> Result<f64, DataError> {
    let v: f64 = text
        .parse()
        .map_err(|_| malformed(line, format!("column `{column}`: `{text}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(line, format!("column `{column}` is not finite")))
    }
}

impl RawTable {
    fn read(reader: impl Read) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let fixed = |names: &[&str]| header.len() >= names.len() && header.iter().zip(names).all(|(h, n)| h == n);
        let (layout, skip) = if fixed(&LONG_HEADER) {
            (Layout::Long, LONG_HEADER.len())
        } else if fixed(&WIDE_HEADER) {
            (Layout::Wide, WIDE_HEADER.len())
        } else {
            return Err(malformed(
                1,
                "header must start with `id,tstart,tstop,status,treated` or `id,time,status`",
            ));
        };
        let covariates = header[skip..].to_vec();
        for (i, c) in covariates.iter().enumerate() {
            if covariates[..i].contains(c) {
                return Err(malformed(1, format!("duplicate column `{c}`")));
            }
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != header.len() {
                return Err(malformed(
                    line,
                    format!("expected {} fields, found {}", header.len(), record.len()),
                ));
            }
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            layout,
            covariates,
            rows,
        })
    }

    fn offset(&self) -> usize {
        match self.layout {
            Layout::Long => LONG_HEADER.len(),
            Layout::Wide => WIDE_HEADER.len(),
        }
    }

    fn infer_schema(&self, time_unit: &str) -> CovariateSchema {
        let off = self.offset();
        let mut schema = CovariateSchema::default().with_unit(time_unit);
        for (j, name) in self.covariates.iter().enumerate() {
            let mut first: HashMap<&str, &str> = HashMap::new();
            let baseline = self.rows.iter().all(|(_, row)| {
                let v = row[off + j].as_str();
                !v.is_empty() && *first.entry(row[0].as_str()).or_insert(v) == v
            });
            if baseline {
                schema.baseline.push(name.clone());
            } else {
                schema.time_varying.push(name.clone());
            }
        }
        schema
    }

    fn build(&self, schema: &CovariateSchema) -> Result<CountingProcessDataset, DataError> {
        let off = self.offset();
        let mut slots = Vec::with_capacity(self.covariates.len());
        for name in &self.covariates {
            slots.push(schema.slot(name)?);
        }
        for name in schema.names() {
            if !self.covariates.iter().any(|c| c == name) {
                return Err(malformed(1, format!("declared covariate `{name}` has no column")));
            }
        }

        let mut order: Vec<String> = Vec::new();
        let mut by_id: HashMap<String, (SubjectRecord, Vec<usize>)> = HashMap::new();
        for (line, row) in &self.rows {
            let line = *line;
            let id = row[0].clone();
            if id.is_empty() {
                return Err(malformed(line, "empty id"));
            }
            let (tstart, tstop, status, treated) = match self.layout {
                Layout::Long => {
                    let tstart = parse_f64(line, "tstart", &row[1])?;
                    let tstop = parse_f64(line, "tstop", &row[2])?;
                    let treated = match row[4].as_str() {
                        "0" => false,
                        "1" => true,
                        other => return Err(malformed(line, format!("treated must be 0 or 1, got `{other}`"))),
                    };
                    (tstart, tstop, &row[3], treated)
                }
                Layout::Wide => (0.0, parse_f64(line, "time", &row[1])?, &row[2], false),
            };
            for t in [tstart, tstop] {
                if t < 0.0 {
                    return Err(DataError::NegativeTime { id, time: t });
                }
            }
            let status = status
                .parse::<u8>()
                .ok()
                .and_then(Status::from_code)
                .ok_or_else(|| malformed(line, format!("status must be 0, 1 or 2, got `{status}`")))?;

            let mut baseline = vec![f64::NAN; schema.baseline.len()];
            let mut tv = vec![None; schema.time_varying.len()];
            for (j, slot) in slots.iter().enumerate() {
                let text = row[off + j].as_str();
                let name = &self.covariates[j];
                match *slot {
                    CovariateSlot::Baseline(i) => {
                        if text.is_empty() {
                            return Err(malformed(line, format!("baseline covariate `{name}` is empty")));
                        }
                        baseline[i] = parse_f64(line, name, text)?;
                    }
                    CovariateSlot::TimeVarying(i) => {
                        if !text.is_empty() {
                            tv[i] = Some(parse_f64(line, name, text)?);
                        }
                    }
                }
            }

            let episode = Episode {
                tstart,
                tstop,
                status,
                treated,
                tv,
            };
            match by_id.get_mut(&id) {
                Some((subject, lines)) => {
                    if subject.baseline != baseline {
                        return Err(malformed(line, "baseline covariates change within subject"));
                    }
                    if self.layout == Layout::Wide {
                        return Err(malformed(line, format!("duplicate id `{id}` in wide layout")));
                    }
                    subject.episodes.push(episode);
                    lines.push(line);
                }
                None => {
                    order.push(id.clone());
                    let subject = SubjectRecord {
                        id: id.clone(),
                        baseline,
                        episodes: vec![episode],
                    };
                    by_id.insert(id, (subject, vec![line]));
                }
            }
        }

        let mut subjects = Vec::with_capacity(order.len());
        for id in order {
            let (mut subject, lines) = by_id.remove(&id).expect("id recorded on first sight");
            let mut idx: Vec<usize> = (0..subject.episodes.len()).collect();
            idx.sort_by(|&a, &b| subject.episodes[a].tstart.total_cmp(&subject.episodes[b].tstart));
            let episodes = std::mem::take(&mut subject.episodes);
            let mut slots: Vec<Option<Episode>> = episodes.into_iter().map(Some).collect();
            subject.episodes = idx.iter().map(|&i| slots[i].take().expect("each index once")).collect();
            for w in subject.episodes.windows(2) {
                if w[0].tstop != w[1].tstart {
                    return Err(DataError::NonContiguousEpisodes {
                        id: subject.id.clone(),
                        prev_stop: w[0].tstop,
                        next_start: w[1].tstart,
                    });
                }
            }
            if let Some(bad) = subject.episodes.iter().position(|e| e.tstart >= e.tstop) {
                return Err(malformed(lines[idx[bad]], "tstart must be smaller than tstop"));
            }
            subjects.push(subject);
        }
        CountingProcessDataset::with_inferred_flavor(schema.clone(), subjects)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DesignFlavor;

    fn read(text: &str, schema: &CovariateSchema) -> Result<CountingProcessDataset, DataError> {
        read_csv(text.as_bytes(), schema)
    }

    #[test]
    fn single_row() {
        let schema = CovariateSchema::new(&["age"], &[]);
        let ds = read("id,tstart,tstop,status,treated,age\n1,0,5,1,0,50\n", &schema).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.subjects()[0];
        assert_eq!(s.baseline, vec![50.0]);
        assert_eq!(s.episodes.len(), 1);
        assert_eq!(s.episodes[0].tstop, 5.0);
        assert_eq!(s.episodes[0].status, Status::Event);
    }

    #[test]
    fn gap_is_non_contiguous() {
        let schema = CovariateSchema::default();
        let err = read("id,tstart,tstop,status,treated\n1,0,2,0,0\n1,3,5,1,0\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::NonContiguousEpisodes { .. }), "{err}");
    }

    #[test]
    fn rows_may_arrive_out_of_order() {
        let schema = CovariateSchema::default();
        let ds = read(
            "id,tstart,tstop,status,treated\n1,3,5,1,1\n2,0,1,0,0\n1,0,3,2,0\n",
            &schema,
        )
        .unwrap();
        assert_eq!(ds.subjects()[0].id, "1");
        assert_eq!(ds.subjects()[0].treatment_time(), Some(3.0));
        assert_eq!(ds.flavor(), DesignFlavor::ContinuesAfterTreatment);
    }

    #[test]
    fn error_paths() {
        let schema = CovariateSchema::new(&["age"], &[]);
        let err = read("id,tstart,tstop,status,treated,age\n1,-1,5,1,0,50\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::NegativeTime { .. }));

        let err = read("id,tstart,tstop,status,treated,bmi\n1,0,5,1,0,20\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::UnknownCovariate(ref c) if c == "bmi"));

        let err = read("id,tstart,tstop,status,treated,age\n1,0,5,7,0,50\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 2, .. }), "{err}");

        let err = read("id,tstart,tstop,status,treated,age\n1,0,5,1,0,\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 2, .. }));

        let err = read(
            "id,tstart,tstop,status,treated,age\n1,0,2,0,0,50\n1,2,5,1,0,51\n",
            &schema,
        )
        .unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 3, .. }));

        let err = read("id,start,stop\n1,0,1\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { line: 1, .. }));

        let err = read("id,tstart,tstop,status,treated,age\n1,0,5,1\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::MalformedRow { .. }), "{err}");
    }

    #[test]
    fn wide_layout_expands_to_one_episode() {
        let schema = CovariateSchema::new(&["x"], &[]);
        let ds = read("id,time,status,x\na,1,1,1\nb,2,2,0\n", &schema).unwrap();
        assert_eq!(ds.n_episodes(), 2);
        assert_eq!(ds.subjects()[1].episodes[0].status, Status::TreatmentStart);
        assert_eq!(ds.flavor(), DesignFlavor::StopsAtTreatment);
    }

    #[test]
    fn missing_tv_values_and_inference() {
        let text = "id,tstart,tstop,status,treated,age,bmi\n1,0,1,0,0,50,22\n1,1,2,1,0,50,\n2,0,3,0,0,60,25\n";
        let table = RawTable::read(text.as_bytes()).unwrap();
        let schema = table.infer_schema("years");
        assert_eq!(schema.baseline, vec!["age"]);
        assert_eq!(schema.time_varying, vec!["bmi"]);
        let ds = table.build(&schema).unwrap();
        assert_eq!(ds.subjects()[0].episodes[1].tv, vec![None]);
        assert_eq!(ds.schema().time_unit, "years");
    }
}
