use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Cell, ResultTable, ResultsError};
use crate::question::{Column, OutputSchema};

const SARIF_VERSION: &str = "2.1.0";
const SARIF_SCHEMA: &str = "https://json.schemastore.org/sarif-2.1.0.json";
const TOOL_NAME: &str = "querysmith";
const RULE_ID: &str = "querysmith/answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Structured,
    Sarif,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 3] = [ExportFormat::Csv, ExportFormat::Structured, ExportFormat::Sarif];

    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Structured => "jsonl",
            ExportFormat::Sarif => "sarif",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "structured" | "jsonl" => Ok(ExportFormat::Structured),
            "sarif" => Ok(ExportFormat::Sarif),
            other => Err(format!("unknown export format `{other}`")),
        }
    }
}

pub fn export(table: &ResultTable, format: ExportFormat) -> Result<Vec<u8>, ResultsError> {
    match format {
        ExportFormat::Csv => export_csv(table),
        ExportFormat::Structured => export_structured(table),
        ExportFormat::Sarif => export_sarif(table),
    }
}

fn export_csv(table: &ResultTable) -> Result<Vec<u8>, ResultsError> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let io = |e: csv::Error| ResultsError::Io(e.to_string());
    writer
        .write_record(table.schema().columns().iter().map(|c| c.name.as_str()))
        .map_err(io)?;
    for row in table.rows() {
        writer.write_record(row.iter().map(Cell::to_string)).map_err(io)?;
    }
    writer.into_inner().map_err(|e| ResultsError::Io(e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StructuredRecord {
    Schema(Vec<Column>),
    Row(Vec<Cell>),
}

fn export_structured(table: &ResultTable) -> Result<Vec<u8>, ResultsError> {
    let mut out = Vec::new();
    let mut push = |record: &StructuredRecord| -> Result<(), ResultsError> {
        serde_json::to_writer(&mut out, record).map_err(|e| ResultsError::Io(e.to_string()))?;
        out.push(b'\n');
        Ok(())
    };
    push(&StructuredRecord::Schema(table.schema().columns().to_vec()))?;
    for row in table.rows() {
        push(&StructuredRecord::Row(row.clone()))?;
    }
    Ok(out)
}

/// Inverse of the structured export.
pub fn parse_structured(bytes: &[u8]) -> Result<ResultTable, ResultsError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ResultsError::Malformed {
        line: 0,
        message: e.to_string(),
    })?;
    let mut schema: Option<OutputSchema> = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ResultsError::Malformed { line: line_no, message };
        let record: StructuredRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        match record {
            StructuredRecord::Schema(columns) => {
                if schema.is_some() {
                    return Err(malformed("duplicate schema record".into()));
                }
                schema = Some(OutputSchema::new(columns).map_err(|e| malformed(e.to_string()))?);
            }
            StructuredRecord::Row(cells) => {
                if schema.is_none() {
                    return Err(malformed("row before schema record".into()));
                }
                rows.push(cells);
            }
        }
    }
    let schema = schema.ok_or(ResultsError::Malformed {
        line: 0,
        message: "missing schema record".into(),
    })?;
    ResultTable::new(schema, rows)
}

#[derive(Serialize)]
struct SarifLog {
    #[serde(rename = "$schema")]
    schema: &'static str,
    version: &'static str,
    runs: Vec<SarifRun>,
}

#[derive(Serialize)]
struct SarifRun {
    tool: SarifTool,
    results: Vec<SarifResult>,
}

#[derive(Serialize)]
struct SarifTool {
    driver: SarifDriver,
}

#[derive(Serialize)]
struct SarifDriver {
    name: &'static str,
    rules: Vec<SarifRule>,
}

#[derive(Serialize)]
struct SarifRule {
    id: &'static str,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SarifResult {
    rule_id: &'static str,
    level: &'static str,
    message: SarifMessage,
    locations: Vec<SarifLocation>,
}

#[derive(Serialize)]
struct SarifMessage {
    text: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SarifLocation {
    physical_location: SarifPhysicalLocation,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SarifPhysicalLocation {
    artifact_location: SarifArtifactLocation,
    region: SarifRegion,
}

#[derive(Serialize)]
struct SarifArtifactLocation {
    uri: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SarifRegion {
    start_line: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    start_column: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end_line: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    end_column: Option<u32>,
}

fn export_sarif(table: &ResultTable) -> Result<Vec<u8>, ResultsError> {
    let results = table
        .rows()
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            let loc = row
                .iter()
                .find_map(Cell::as_location)
                .ok_or(ResultsError::NoLocationCell(idx))?;
            let text = row.iter().map(Cell::to_string).collect::<Vec<_>>().join(", ");
            Ok(SarifResult {
                rule_id: RULE_ID,
                level: "note",
                message: SarifMessage { text },
                locations: vec![SarifLocation {
                    physical_location: SarifPhysicalLocation {
                        artifact_location: SarifArtifactLocation { uri: loc.file.clone() },
                        // SARIF columns are 1-based; column 0 means "unknown".
                        region: SarifRegion {
                            start_line: loc.line,
                            start_column: (loc.column > 0).then_some(loc.column),
                            end_line: loc.end_line,
                            end_column: loc.end_column.filter(|c| *c > 0).map(|c| c + 1),
                        },
                    },
                }],
            })
        })
        .collect::<Result<Vec<_>, ResultsError>>()?;
    let log = SarifLog {
        schema: SARIF_SCHEMA,
        version: SARIF_VERSION,
        runs: vec![SarifRun {
            tool: SarifTool {
                driver: SarifDriver {
                    name: TOOL_NAME,
                    rules: vec![SarifRule { id: RULE_ID }],
                },
            },
            results,
        }],
    };
    let mut out = serde_json::to_vec_pretty(&log).map_err(|e| ResultsError::Io(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::Location;
    use proptest::prelude::*;

    fn schema(spec: &str) -> OutputSchema {
        OutputSchema::parse_inline(spec).unwrap()
    }

    #[test]
    fn empty_table_csv_is_header_only() {
        let table = ResultTable::empty(schema("location:where;note:text"));
        assert_eq!(export(&table, ExportFormat::Csv).unwrap(), b"location,note\r\n");
    }

    #[test]
    fn csv_quotes_fields_with_separators() {
        let table = ResultTable::new(
            schema("a:x;b:y"),
            vec![vec![
                Cell::Text("x, \"y\"".into()),
                Cell::Location(Location::new("A.java", 2, 3)),
            ]],
        )
        .unwrap();
        let out = String::from_utf8(export(&table, ExportFormat::Csv).unwrap()).unwrap();
        assert_eq!(out, "a,b\r\n\"x, \"\"y\"\"\",A.java:2:3\r\n");
    }

    #[test]
    fn sarif_needs_a_location_per_row() {
        let table = ResultTable::new(schema("t:x"), vec![vec![Cell::Text("no loc".into())]]).unwrap();
        assert_eq!(
            export(&table, ExportFormat::Sarif),
            Err(ResultsError::NoLocationCell(0))
        );
    }

    #[test]
    fn sarif_emits_one_result_per_row() {
        let rows = (1..=3)
            .map(|l| vec![Cell::Location(Location::new("A.java", l, 0).with_end(l, 4))])
            .collect();
        let table = ResultTable::new(schema("loc:x"), rows).unwrap();
        let sarif: serde_json::Value = serde_json::from_slice(&export(&table, ExportFormat::Sarif).unwrap()).unwrap();
        assert_eq!(sarif["version"], "2.1.0");
        let results = sarif["runs"][0]["results"].as_array().unwrap();
        assert_eq!(results.len(), 3);
        let region = &results[2]["locations"][0]["physicalLocation"]["region"];
        assert_eq!(region["startLine"], 3);
        assert!(region.get("startColumn").is_none());
        assert_eq!(region["endColumn"], 5);
    }

    #[test]
    fn structured_rejects_rows_before_schema() {
        let err = parse_structured(b"{\"row\":[{\"text\":\"x\"}]}\n").unwrap_err();
        assert!(matches!(err, ResultsError::Malformed { line: 1, .. }));
        assert!(parse_structured(b"").is_err());
    }

    fn arb_cell() -> impl Strategy<Value = Cell> {
        prop_oneof![
            ".{0,12}".prop_map(Cell::Text),
            ("[a-z/]{1,8}\\.java", 1u32..500, 0u32..80, proptest::option::of(0u32..5)).prop_map(
                |(file, line, col, span)| {
                    let loc = Location::new(file, line, col);
                    Cell::Location(match span {
                        Some(extra) => loc.with_end(line + extra, col + 1),
                        None => loc,
                    })
                }
            ),
        ]
    }

    proptest! {
        #[test]
        fn structured_export_round_trips(arity in 1usize..4, raw_rows in proptest::collection::vec(proptest::collection::vec(arb_cell(), 4), 0..6)) {
            let spec = (0..arity).map(|i| format!("c{i}:column {i}")).collect::<Vec<_>>().join(";");
            let rows = raw_rows.into_iter().map(|mut r| { r.truncate(arity); r }).collect();
            let table = ResultTable::new(schema(&spec), rows).unwrap();
            let bytes = export(&table, ExportFormat::Structured).unwrap();
            prop_assert_eq!(parse_structured(&bytes).unwrap(), table);
        }
    }
}
