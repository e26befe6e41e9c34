//! CSV formats.
//!
//! | file          | header                                            |
//! |---------------|---------------------------------------------------|
//! | dataset       | `s,z,e,y`                                         |
//! | augmented     | `s,z,e,y,e_hat,y_hat,method_used,abstained`       |
//! | channel       | `s,e,z,p` (every entry, zeros included)           |
//! | distribution  | `s,value,p` (every domain value)                  |
//! | results       | `run_id,dataset_id,method,metric,group_scope,value` |
//!
//! Missing values are empty fields. Reals are written with Rust's shortest
//! round-trip formatting, so reading a written file reproduces it exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use super::evaluate::MetricRow;
use super::PipelineError;
use crate::types::{Channel, DecisionMethod, Domain, GroupLabel, GroupedDistribution, ProbVector, SampleTable};

type Result<T> = std::result::Result<T, PipelineError>;

pub const DATASET_COLUMNS: [&str; 4] = ["s", "z", "e", "y"];
pub const DERIVED_COLUMNS: [&str; 4] = ["e_hat", "y_hat", "method_used", "abstained"];
pub const RESULT_COLUMNS: [&str; 6] = ["run_id", "dataset_id", "method", "metric", "group_scope", "value"];

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    File::create(path).map_err(|e| PipelineError::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| PipelineError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PipelineError::io(path, io),
        other => PipelineError::format(path, format!("{other:?}")),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a sample table. The augmented columns are included only when the
/// table carries any of them.
pub fn write_table<W: Write>(out: W, table: &SampleTable) -> std::result::Result<(), csv::Error> {
    let mut w = WriterBuilder::new().from_writer(out);
    let derived = table.has_derived();
    let mut header: Vec<&str> = DATASET_COLUMNS.to_vec();
    if derived {
        header.extend(DERIVED_COLUMNS);
    }
    w.write_record(&header)?;
    for i in 0..table.len() {
        let mut rec = vec![
            table.s()[i].0.to_string(),
            table.z()[i].to_string(),
            opt(table.e().and_then(|c| c[i])),
            opt(table.y().and_then(|c| c[i])),
        ];
        if derived {
            rec.push(opt(table.e_hat().and_then(|c| c[i])));
            rec.push(opt(table.y_hat().and_then(|c| c[i])));
            rec.push(opt(table.method_used().and_then(|c| c[i]).map(DecisionMethod::code)));
            rec.push(opt(table.abstained().and_then(|c| c[i]).map(u8::from)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, table: &SampleTable) -> Result<()> {
    write_table(create(path)?, table).map_err(|e| csv_err(path, e))
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn get<'a>(&self, rec: &'a StringRecord, name: &str) -> Option<&'a str> {
        self.index.get(name).and_then(|&i| rec.get(i)).filter(|v| !v.is_empty())
    }
}

/// Integer field; real values are rounded to the nearest integer.
fn parse_int(raw: &str) -> Option<i64> {
    if let Ok(v) = raw.parse::<i64>() {
        return Some(v);
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.round() as i64)
}

fn parse_flag(raw: &str) -> Option<u8> {
    match raw {
        "0" | "false" => Some(0),
        "1" | "true" => Some(1),
        _ => None,
    }
}

/// Reads a dataset or augmented table. `s` and `z` are required; any other
/// known column is optional and unknown columns are ignored.
pub fn read_table<R: Read>(input: R, path: &Path) -> Result<SampleTable> {
    let mut r = ReaderBuilder::new().trim(Trim::All).from_reader(input);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = Columns { index: header.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect() };
    for required in ["s", "z"] {
        if !cols.index.contains_key(required) {
            return Err(PipelineError::format(path, format!("missing column {required}")));
        }
    }
    let has = |c: &str| cols.index.contains_key(c);
    let (mut s, mut z) = (Vec::new(), Vec::new());
    let mut e = Vec::new();
    let mut y = Vec::new();
    let mut e_hat = Vec::new();
    let mut y_hat = Vec::new();
    let mut used = Vec::new();
    let mut abstained = Vec::new();

    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |column: &str, value: &str| {
            PipelineError::format(path, format!("row {row}: column {column}: cannot parse {value:?}"))
        };
        let field = |name: &'static str| cols.get(&rec, name);
        let int = |name: &'static str| -> Result<Option<i64>> {
            field(name).map(|v| parse_int(v).ok_or_else(|| bad(name, v))).transpose()
        };
        let flag = |name: &'static str| -> Result<Option<u8>> {
            field(name).map(|v| parse_flag(v).ok_or_else(|| bad(name, v))).transpose()
        };

        let sv = field("s").ok_or_else(|| bad("s", ""))?;
        s.push(GroupLabel(sv.parse().map_err(|_| bad("s", sv))?));
        z.push(int("z")?.ok_or_else(|| bad("z", ""))?);
        e.push(int("e")?);
        y.push(flag("y")?);
        e_hat.push(int("e_hat")?);
        y_hat.push(flag("y_hat")?);
        used.push(match field("method_used") {
            None => None,
            Some(v) => Some(
                v.parse::<u8>()
                    .ok()
                    .and_then(DecisionMethod::from_code)
                    .ok_or_else(|| bad("method_used", v))?,
            ),
        });
        abstained.push(flag("abstained")?.map(|f| f == 1));
    }

    let table = SampleTable::new(s, z)?
        .with_e(has("e").then_some(e))?
        .with_y(has("y").then_some(y))?
        .with_e_hat(has("e_hat").then_some(e_hat))?
        .with_y_hat(has("y_hat").then_some(y_hat))?
        .with_method_used(has("method_used").then_some(used))?
        .with_abstained(has("abstained").then_some(abstained))?;
    Ok(table)
}

pub fn read_dataset(path: &Path) -> Result<SampleTable> {
    read_table(open(path)?, path)
}

pub fn write_channel(path: &Path, channel: &Channel) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(create(path)?);
    let inner = |w: &mut csv::Writer<File>| -> std::result::Result<(), csv::Error> {
        w.write_record(["s", "e", "z", "p"])?;
        for g in 0..channel.num_groups() {
            for (ei, &e) in channel.e_domain().values().iter().enumerate() {
                for (zi, &z) in channel.z_domain().values().iter().enumerate() {
                    let p = channel.prob(GroupLabel(g), ei, zi);
                    w.write_record([g.to_string(), e.to_string(), z.to_string(), p.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))
}

/// Reads a long-format channel. The E and Z domains are the sets of values
/// listed; absent `(s,e,z)` entries are 0. Rows must sum to 1.
pub fn read_channel(path: &Path) -> Result<Channel> {
    let mut r = ReaderBuilder::new().trim(Trim::All).from_reader(open(path)?);
    let mut entries = Vec::new();
    let (mut es, mut zs, mut groups) = (BTreeSet::new(), BTreeSet::new(), 0usize);
    for (row, rec) in r.deserialize::<(usize, i64, i64, f64)>().enumerate() {
        let (s, e, z, p) = rec.map_err(|e| PipelineError::format(path, format!("row {row}: {e}")))?;
        es.insert(e);
        zs.insert(z);
        groups = groups.max(s + 1);
        entries.push((s, e, z, p));
    }
    if entries.is_empty() {
        return Err(PipelineError::format(path, "channel file has no entries"));
    }
    let e_domain = Domain::new(es.into_iter().collect())?;
    let z_domain = Domain::new(zs.into_iter().collect())?;
    let nz = z_domain.len();
    let mut matrices = vec![vec![0.0; e_domain.len() * nz]; groups];
    for (s, e, z, p) in entries {
        let ei = e_domain.index_of(e).expect("collected");
        let zi = z_domain.index_of(z).expect("collected");
        matrices[s][ei * nz + zi] = p;
    }
    Channel::new(e_domain, z_domain, matrices).map_err(|e| PipelineError::format(path, e.to_string()))
}

pub fn write_distribution(path: &Path, dist: &GroupedDistribution) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(create(path)?);
    let inner = |w: &mut csv::Writer<File>| -> std::result::Result<(), csv::Error> {
        w.write_record(["s", "value", "p"])?;
        for (g, pv) in dist.groups().iter().enumerate() {
            for (&v, &p) in pv.domain().values().iter().zip(pv.mass()) {
                w.write_record([g.to_string(), v.to_string(), p.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))
}

/// Reads a distribution file; every group must list the same values.
pub fn read_distribution(path: &Path) -> Result<GroupedDistribution> {
    let mut r = ReaderBuilder::new().trim(Trim::All).from_reader(open(path)?);
    let mut per_group: BTreeMap<usize, BTreeMap<i64, f64>> = BTreeMap::new();
    for (row, rec) in r.deserialize::<(usize, i64, f64)>().enumerate() {
        let (s, v, p) = rec.map_err(|e| PipelineError::format(path, format!("row {row}: {e}")))?;
        per_group.entry(s).or_default().insert(v, p);
    }
    if per_group.is_empty() {
        return Err(PipelineError::format(path, "distribution file has no entries"));
    }
    if per_group.keys().copied().ne(0..per_group.len()) {
        return Err(PipelineError::format(path, "groups must be numbered 0, 1, ..."));
    }
    let domain = Domain::new(per_group[&0].keys().copied().collect())?;
    let groups = per_group
        .values()
        .map(|m| {
            if m.keys().copied().ne(domain.values().iter().copied()) {
                return Err(PipelineError::format(path, "groups list different values"));
            }
            ProbVector::new(domain.clone(), m.values().copied().collect())
                .map_err(|e| PipelineError::format(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedDistribution::new(groups)?)
}

pub fn write_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(create(path)?);
    let inner = |w: &mut csv::Writer<File>| -> std::result::Result<(), csv::Error> {
        w.write_record(RESULT_COLUMNS)?;
        for r in rows {
            w.write_record([
                r.run_id.as_str(),
                r.dataset_id.as_str(),
                r.method.as_str(),
                r.metric.as_str(),
                r.group_scope.as_str(),
                &r.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = ReaderBuilder::new().trim(Trim::All).from_reader(open(path)?);
    r.deserialize::<(String, String, String, String, String, f64)>()
        .enumerate()
        .map(|(row, rec)| {
            let (run_id, dataset_id, method, metric, group_scope, value) =
                rec.map_err(|e| PipelineError::format(path, format!("row {row}: {e}")))?;
            Ok(MetricRow { run_id, dataset_id, method, metric, group_scope, value })
        })
        .collect()
}

/// Writes a header and string records; used for manifests and run records.
pub fn write_records<I, R>(path: &Path, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = WriterBuilder::new().from_writer(create(path)?);
    let inner = |w: &mut csv::Writer<File>| -> std::result::Result<(), csv::Error> {
        w.write_record(header)?;
        for rec in records {
            w.write_record(rec.into_iter().collect::<Vec<_>>())?;
        }
        w.flush()?;
        Ok(())
    };
    inner(&mut w).map_err(|e| csv_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SampleTable> {
        read_table(text.as_bytes(), Path::new("mem"))
    }

    #[test]
    fn dataset_round_trip() {
        let t = SampleTable::with_truth(vec![GroupLabel(0), GroupLabel(1)], vec![3, 7], vec![2, 9], vec![0, 1]).unwrap();
        let mut buf = Vec::new();
        write_table(&mut buf, &t).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "s,z,e,y\n0,3,2,0\n1,7,9,1\n");
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), t);
    }

    #[test]
    fn augmented_round_trip() {
        let t = SampleTable::new(vec![GroupLabel(0), GroupLabel(1)], vec![3, 7])
            .unwrap()
            .with_e_hat(Some(vec![Some(4), None]))
            .unwrap()
            .with_y_hat(Some(vec![Some(0), Some(1)]))
            .unwrap()
            .with_method_used(Some(vec![Some(DecisionMethod::Mode), Some(DecisionMethod::Mass)]))
            .unwrap()
            .with_abstained(Some(vec![Some(false), Some(true)]))
            .unwrap();
        let mut buf = Vec::new();
        write_table(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "s,z,e,y,e_hat,y_hat,method_used,abstained");
        assert_eq!(text.lines().nth(2).unwrap(), "1,7,,,,1,2,1");
        assert_eq!(parse(&text).unwrap(), t);
    }

    #[test]
    fn observations_only_and_real_z() {
        let t = parse("z,s\n3.4,0\n6.6,1\n").unwrap();
        assert_eq!(t.z(), &[3, 7]);
        assert!(t.e().is_none() && t.y().is_none());
    }

    #[test]
    fn read_errors_name_the_problem() {
        let msg = parse("s,e\n0,1\n").unwrap_err().to_string();
        assert!(msg.contains("missing column z"), "{msg}");
        let msg = parse("s,z,y\n0,1,2\n").unwrap_err().to_string();
        assert!(msg.contains("row 0: column y"), "{msg}");
        let msg = parse("s,z\n-1,1\n").unwrap_err().to_string();
        assert!(msg.contains("column s"), "{msg}");
    }

    #[test]
    fn channel_and_distribution_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = Channel::shared(
            Domain::new(vec![0, 5]).unwrap(),
            Domain::range(0, 2).unwrap(),
            vec![0.1, 0.0, 0.9, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            2,
        )
        .unwrap();
        let path = dir.path().join("c.csv");
        write_channel(&path, &c).unwrap();
        assert_eq!(read_channel(&path).unwrap(), c);

        let d = GroupedDistribution::new(vec![
            ProbVector::new(Domain::range(0, 2).unwrap(), vec![0.2, 0.0, 0.8]).unwrap(),
            ProbVector::uniform(Domain::range(0, 2).unwrap()),
        ])
        .unwrap();
        let path = dir.path().join("nested/d.csv");
        write_distribution(&path, &d).unwrap();
        assert_eq!(read_distribution(&path).unwrap(), d);

        std::fs::write(&path, "s,value,p\n0,0,0.5\n0,1,0.4\n").unwrap();
        assert!(read_distribution(&path).is_err());
    }

    #[test]
    fn metric_rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![MetricRow {
            run_id: "r0".into(),
            dataset_id: "mean0_40".into(),
            method: "babe".into(),
            metric: "eod".into(),
            group_scope: "all".into(),
            value: 0.1 + 0.2,
        }];
        let path = dir.path().join("r.csv");
        write_metric_rows(&path, &rows).unwrap();
        assert_eq!(read_metric_rows(&path).unwrap(), rows);
    }
}
