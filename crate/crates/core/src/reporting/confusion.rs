use crate::error::{Error, Result};

/// Renders a confusion matrix (rows true, columns predicted) as an aligned
/// text table with row and column totals.
pub fn render_confusion(confusion: &[Vec<u64>], class_names: &[String]) -> Result<String> {
    let n = confusion.len();
    if class_names.len() != n || confusion.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!(
            "confusion matrix must be {0}x{0} to match {0} class names",
            class_names.len()
        )));
    }
    let row_totals: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..n).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let grand: u64 = row_totals.iter().sum();

    let corner = "true \\ pred";
    let mut header: Vec<String> = vec![corner.to_string()];
    header.extend(class_names.iter().cloned());
    header.push("total".into());
    let mut rows = vec![header];
    for (i, name) in class_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(confusion[i].iter().map(|v| v.to_string()));
        row.push(row_totals[i].to_string());
        rows.push(row);
    }
    let mut footer = vec!["total".to_string()];
    footer.extend(col_totals.iter().map(|v| v.to_string()));
    footer.push(grand.to_string());
    rows.push(footer);

    let widths: Vec<usize> = (0..n + 2)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}
