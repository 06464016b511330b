use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentEntry {
    pub label: String,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// Time-stamped phoneme intervals, one per line in TSV form:
/// `label<TAB>start_sec<TAB>end_sec`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRecord {
    entries: Vec<AlignmentEntry>,
}

impl AlignmentRecord {
    pub fn new(entries: Vec<AlignmentEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Alignment("no intervals".into()));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (i, e) in entries.iter().enumerate() {
            if !(e.start_sec.is_finite() && e.end_sec.is_finite()) || e.start_sec < 0.0 {
                return Err(Error::Alignment(format!("entry {i}: invalid times")));
            }
            if e.start_sec >= e.end_sec {
                return Err(Error::Alignment(format!(
                    "entry {i} (`{}`): start {} not before end {}",
                    e.label, e.start_sec, e.end_sec
                )));
            }
            if e.start_sec < prev_end {
                return Err(Error::Alignment(format!(
                    "entry {i} (`{}`) starts at {} before the previous entry ends at {prev_end}",
                    e.label, e.start_sec
                )));
            }
            prev_end = e.end_sec;
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_named(text, "<alignment>")
    }

    fn parse_named(text: &str, name: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [label, start, end] = fields[..] else {
                return Err(parse_err(n + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(n + 1, format!("`{s}` is not a number")))
            };
            entries.push(AlignmentEntry {
                label: label.trim().to_string(),
                start_sec: num(start)?,
                end_sec: num(end)?,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_named(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.label, e.start_sec, e.end_sec))
            .collect()
    }

    pub fn entries(&self) -> &[AlignmentEntry] {
        &self.entries
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }
}

/// Per-phoneme durations in mel frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DurationVector {
    values: Vec<usize>,
}

impl DurationVector {
    pub fn new(values: Vec<usize>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty duration vector".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> usize {
        self.values.iter().sum()
    }

    pub fn to_csv_line(&self) -> String {
        let parts: Vec<String> = self.values.iter().map(usize::to_string).collect();
        format!("{}\n", parts.join(","))
    }

    pub fn parse_csv_line(s: &str) -> Result<Self> {
        let values = s
            .trim()
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad duration `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

/// Ground-truth durations: `round(end·fps) − round(start·fps)` per entry,
/// then the drift against `l_a` is absorbed from the end of the vector
/// (the final nonzero entry first) so the total equals `l_a` exactly.
///
/// Fails if the rounded total is off by more than 5 % of `l_a`.
pub fn durations_from_alignment(rec: &AlignmentRecord, mel_fps: f64, l_a: usize) -> Result<DurationVector> {
    if l_a == 0 {
        return Err(Error::InvalidArgument("l_a must be positive".into()));
    }
    let frame = |t: f64| (t * mel_fps).round() as i64;
    let mut values: Vec<i64> = rec
        .entries
        .iter()
        .map(|e| frame(e.end_sec) - frame(e.start_sec))
        .collect();
    let sum: i64 = values.iter().sum();
    let drift = l_a as i64 - sum;
    if drift.unsigned_abs() as f64 > 0.05 * l_a as f64 {
        return Err(Error::Alignment(format!(
            "alignment covers {sum} frames but the audio has {l_a}"
        )));
    }
    if drift > 0 {
        let last = values.iter().rposition(|&v| v > 0).unwrap_or(values.len() - 1);
        values[last] += drift;
    } else {
        let mut excess = -drift;
        for v in values.iter_mut().rev() {
            let take = excess.min(*v);
            *v -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    }
    DurationVector::new(values.into_iter().map(|v| v as usize).collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_example_3_1_2() {
        let rec = AlignmentRecord::parse("P\t0.00\t0.03\nA\t0.03\t0.04\nT\t0.04\t0.06\n").unwrap();
        let d = durations_from_alignment(&rec, 100.0, 6).unwrap();
        assert_eq!(d.values(), &[3, 1, 2]);
    }

    #[test]
    fn single_phoneme_whole_utterance() {
        let rec = AlignmentRecord::parse("AH0\t0\t0.96\n").unwrap();
        assert_eq!(durations_from_alignment(&rec, 100.0, 96).unwrap().values(), &[96]);
    }

    #[test]
    fn one_frame_drift_is_absorbed_by_the_final_entry() {
        // Rounded frames 30 + 20 + 45 = 95 against 96 mel frames.
        let rec = AlignmentRecord::parse("P\t0.00\t0.30\nA\t0.30\t0.50\nT\t0.50\t0.95\n").unwrap();
        let d = durations_from_alignment(&rec, 100.0, 96).unwrap();
        assert_eq!(d.values(), &[30, 20, 46]);

        // 30 + 20 + 47 = 97 against 96.
        let rec = AlignmentRecord::parse("P\t0.00\t0.30\nA\t0.30\t0.50\nT\t0.50\t0.97\n").unwrap();
        assert_eq!(durations_from_alignment(&rec, 100.0, 96).unwrap().values(), &[30, 20, 46]);

        // Excess larger than the final entry spills into the one before it.
        let rec = AlignmentRecord::parse("A\t0\t0.95\nB\t0.95\t0.96\nC\t0.96\t0.98\n").unwrap();
        let d = durations_from_alignment(&rec, 100.0, 95).unwrap();
        assert_eq!(d.values(), &[95, 0, 0]);
    }

    #[test]
    fn excess_drift_is_an_error() {
        let rec = AlignmentRecord::parse("AH0\t0\t0.50\n").unwrap();
        assert!(matches!(durations_from_alignment(&rec, 100.0, 96), Err(Error::Alignment(_))));
    }

    #[test]
    fn malformed_alignments() {
        assert!(AlignmentRecord::parse("").is_err());
        assert!(AlignmentRecord::parse("A\t0.2\t0.1\n").is_err());
        assert!(AlignmentRecord::parse("A\t0\t0.2\nB\t0.1\t0.3\n").is_err());
        assert!(matches!(AlignmentRecord::parse("A 0 0.2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(AlignmentRecord::parse("A\t0\tx\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_line_roundtrip() {
        let d = DurationVector::new(vec![3, 1, 2]).unwrap();
        assert_eq!(d.to_csv_line(), "3,1,2\n");
        assert_eq!(DurationVector::parse_csv_line("3,1,2\n").unwrap(), d);
    }

    proptest! {
        #[test]
        fn reconciled_total_equals_l_a(frames in proptest::collection::vec(1usize..12, 1..30), jitter in -2i64..=2) {
            let mut t = 0usize;
            let mut tsv = String::new();
            for (i, f) in frames.iter().enumerate() {
                tsv.push_str(&format!("p{i}\t{}\t{}\n", t as f64 / 100.0, (t + f) as f64 / 100.0));
                t += f;
            }
            let l_a = (t as i64 + jitter).max(1) as usize;
            let rec = AlignmentRecord::parse(&tsv).unwrap();
            match durations_from_alignment(&rec, 100.0, l_a) {
                Ok(d) => prop_assert_eq!(d.total(), l_a),
                Err(_) => prop_assert!((l_a as f64 - t as f64).abs() > 0.05 * l_a as f64),
            }
        }
    }
}
