//! One-line-per-round text report.
//!
//! `round=<r> function=<sum|mean> value=<v|-> n_participants=<k>
//! integrity=<passed|attested|rejected> probes=<p> outliers=<id,id,...|->`

use std::collections::BTreeMap;

use thiserror::Error;

use super::QueryResult;
use crate::crypto::Domain;

pub const REPORT_FIELDS: [&str; 7] = [
    "round",
    "function",
    "value",
    "n_participants",
    "integrity",
    "probes",
    "outliers",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportLineError {
    #[error("malformed field `{0}`")]
    Malformed(String),
    #[error("expected field `{expected}`, found `{found}`")]
    UnexpectedField { expected: &'static str, found: String },
    #[error("missing field `{0}`")]
    Missing(&'static str),
}

pub fn format_report_line(result: &QueryResult, domain: &Domain) -> String {
    let value = match result.value {
        Some(v) => format!("{v:.prec$}", prec = domain.decimals() + 2),
        None => "-".to_string(),
    };
    let outliers = result.outliers();
    let outliers = if outliers.is_empty() {
        "-".to_string()
    } else {
        outliers.iter().map(|id| id.to_string()).collect::<Vec<_>>().join(",")
    };
    format!(
        "round={} function={} value={} n_participants={} integrity={} probes={} outliers={}",
        result.round,
        result.function,
        value,
        result.participants.len(),
        result.integrity,
        result.probes(),
        outliers
    )
}

/// Splits a report line into its fields, checking names and order.
pub fn parse_report_line(line: &str) -> Result<BTreeMap<&'static str, String>, ReportLineError> {
    let mut out = BTreeMap::new();
    let mut parts = line.split_whitespace();
    for expected in REPORT_FIELDS {
        let part = parts.next().ok_or(ReportLineError::Missing(expected))?;
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| ReportLineError::Malformed(part.to_string()))?;
        if name != expected {
            return Err(ReportLineError::UnexpectedField {
                expected,
                found: name.to_string(),
            });
        }
        out.insert(expected, value.to_string());
    }
    if let Some(extra) = parts.next() {
        return Err(ReportLineError::Malformed(extra.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basestation::{AttestationReport, Integrity};
    use crate::crypto::DomainValue;
    use crate::node::AggFunction;
    use crate::topology::NodeId;
    use std::collections::BTreeSet;

    #[test]
    fn formats_and_parses() {
        let report = AttestationReport {
            outliers: BTreeSet::from([NodeId(4), NodeId(2)]),
            probes: 6,
            transcript: vec![],
            ..Default::default()
        };
        let r = QueryResult {
            round: 3,
            function: AggFunction::Sum,
            value: Some(1234.5),
            sum: Some(DomainValue::new(123_450)),
            participants: (1..=9).map(NodeId).collect(),
            integrity: Integrity::Attested,
            report: Some(report),
        };
        let line = format_report_line(&r, &Domain::default());
        assert_eq!(
            line,
            "round=3 function=sum value=1234.5000 n_participants=9 integrity=attested probes=6 outliers=2,4"
        );
        let fields = parse_report_line(&line).unwrap();
        assert_eq!(fields["outliers"], "2,4");

        let rejected = QueryResult {
            value: None,
            sum: None,
            integrity: Integrity::Rejected,
            report: None,
            participants: BTreeSet::new(),
            ..r
        };
        let line = format_report_line(&rejected, &Domain::default());
        assert!(line.contains("value=- n_participants=0 integrity=rejected probes=0 outliers=-"));
    }

    #[test]
    fn rejects_wrong_fields() {
        assert!(matches!(
            parse_report_line("round=1 function=sum"),
            Err(ReportLineError::Missing("value"))
        ));
        assert!(matches!(
            parse_report_line("rnd=1"),
            Err(ReportLineError::UnexpectedField { expected: "round", .. })
        ));
    }
}
