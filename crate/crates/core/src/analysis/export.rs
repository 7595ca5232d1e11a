use std::fmt::Write as _;
use std::io::Write;

use super::{Result, SaliencyReport, SimilarityGraph};
use crate::tensor::Tensor;

/// `task,dim,grad,causal` rows.
pub fn write_saliency_csv<W: Write>(w: W, report: &SaliencyReport, masks: &[Vec<bool>]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["task", "dim", "grad", "causal"])?;
    for (t, g) in report.grads.iter().enumerate() {
        for (j, v) in g.iter().enumerate() {
            let causal = masks.get(t).and_then(|m| m.get(j)).copied().unwrap_or(false);
            csv.write_record([t.to_string(), j.to_string(), v.to_string(), u8::from(causal).to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Matrix with a leading `row` column and `c0..` headers.
pub fn write_matrix_csv<W: Write>(w: W, m: &Tensor, row_prefix: &str, col_prefix: &str) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let (r, c) = m.dims2();
    let mut header = vec!["row".to_string()];
    header.extend((0..c).map(|j| format!("{col_prefix}{j}")));
    csv.write_record(&header)?;
    for i in 0..r {
        let mut rec = vec![format!("{row_prefix}{i}")];
        rec.extend(m.row_slice(i).iter().map(|v| v.to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// `task_a,task_b,similarity,edge`
pub fn write_similarity_csv<W: Write>(w: W, g: &SimilarityGraph) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["task_a", "task_b", "similarity", "edge"])?;
    let (t, _) = g.matrix.dims2();
    for i in 0..t {
        for j in 0..t {
            let s = g.matrix.get(i, j);
            let edge = i != j && s >= g.threshold;
            csv.write_record([i.to_string(), j.to_string(), s.to_string(), u8::from(edge).to_string()])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Grayscale grid of `|m|` (white 0, black 1) with lines every `block` cells.
pub fn heatmap_svg(m: &Tensor, block: usize, cell: usize) -> String {
    let (r, c) = m.dims2();
    let (w, h) = (c * cell, r * cell);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for i in 0..r {
        for j in 0..c {
            let v = m.get(i, j).abs().min(1.0);
            let g = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({g},{g},{g})"/>"#,
                j * cell,
                i * cell
            );
        }
    }
    if block > 0 {
        for k in (block..c).step_by(block) {
            let x = k * cell;
            let _ = writeln!(s, r#"<line x1="{x}" y1="0" x2="{x}" y2="{h}" stroke="red" stroke-width="1"/>"#);
        }
        for k in (block..r).step_by(block) {
            let y = k * cell;
            let _ = writeln!(s, r#"<line x1="0" y1="{y}" x2="{w}" y2="{y}" stroke="red" stroke-width="1"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_rect_per_cell_and_block_lines() {
        let m = Tensor::identity(4);
        let svg = heatmap_svg(&m, 2, 10);
        assert_eq!(svg.matches("<rect").count(), 16);
        assert_eq!(svg.matches("<line").count(), 2);
        assert!(svg.contains("rgb(0,0,0)"));
        assert!(svg.contains("rgb(255,255,255)"));
    }

    #[test]
    fn matrix_csv_layout() {
        let mut out = Vec::new();
        write_matrix_csv(&mut out, &Tensor::identity(2), "task", "module").unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "row,module0,module1\ntask0,1,0\ntask1,0,1\n");
    }
}
