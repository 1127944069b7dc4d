use super::ResultTable;

/// Plain-text table with left-aligned, space-padded columns.
pub fn render(table: &ResultTable) -> String {
    let header: Vec<String> = table.schema().columns().iter().map(|c| c.name.clone()).collect();
    let body: Vec<Vec<String>> = table
        .rows()
        .iter()
        .map(|row| row.iter().map(|cell| sanitize(&cell.to_string())).collect())
        .collect();

    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }

    let mut out = String::new();
    push_line(&mut out, &header, &widths);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    push_line(&mut out, &rule, &widths);
    for row in &body {
        push_line(&mut out, row, &widths);
    }
    out.push_str(&format!(
        "({} row{})\n",
        body.len(),
        if body.len() == 1 { "" } else { "s" }
    ));
    out
}

fn push_line(out: &mut String, cells: &[String], widths: &[usize]) {
    let last = cells.len().saturating_sub(1);
    for (i, (cell, width)) in cells.iter().zip(widths).enumerate() {
        out.push_str(cell);
        if i < last {
            let pad = width - cell.chars().count();
            out.push_str(&" ".repeat(pad + 2));
        }
    }
    out.push('\n');
}

fn sanitize(s: &str) -> String {
    s.replace(['\n', '\r', '\t'], " ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::OutputSchema;
    use crate::results::{Cell, Location};

    #[test]
    fn aligns_columns_and_prints_clickable_locations() {
        let schema = OutputSchema::parse_inline("call:where;callee:name").unwrap();
        let table = ResultTable::new(
            schema,
            vec![
                vec![
                    Cell::Location(Location::new("src/A.java", 12, 5)),
                    Cell::Text("equals".into()),
                ],
                vec![Cell::Location(Location::new("B.java", 3, 1)), Cell::Text("x".into())],
            ],
        )
        .unwrap();
        let text = render(&table);
        let expected = [
            "call             callee",
            "---------------  ------",
            "src/A.java:12:5  equals",
            "B.java:3:1       x",
            "(2 rows)",
        ];
        assert_eq!(text, expected.join("\n") + "\n");
    }

    #[test]
    fn empty_table_has_header_only() {
        let table = ResultTable::empty(OutputSchema::parse_inline("loc:x").unwrap());
        assert_eq!(render(&table), "loc\n---\n(0 rows)\n");
    }
}
