//! CSV writers. Numbers use the shortest representation that round-trips, so
//! identical runs produce identical bytes.

use std::io::Write;

use super::stats::{Histogram, ImageAverage, OrderDistribution};
use super::{InteractionSample, PipelineError};

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn io(e: csv::Error) -> PipelineError {
    PipelineError::Io(std::io::Error::other(e))
}

/// `image_id,i,j,order_ratio,s,context_id,delta_f`
pub fn write_samples_csv<W: Write>(out: W, samples: &[InteractionSample]) -> Result<(), PipelineError> {
    let mut w = writer(out);
    w.write_record(["image_id", "i", "j", "order_ratio", "s", "context_id", "delta_f"]).map_err(io)?;
    for s in samples {
        w.write_record([
            s.image_id.to_string(),
            s.i.to_string(),
            s.j.to_string(),
            num(s.order_ratio),
            s.order.to_string(),
            s.context_id.to_string(),
            num(s.value),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// `order_ratio,q1,median,q3,count`, with an optional leading `image_id`.
pub fn write_order_distribution_csv<W: Write>(
    out: W,
    dists: &[(Option<usize>, &OrderDistribution)],
) -> Result<(), PipelineError> {
    let mut w = writer(out);
    let per_image = dists.iter().any(|(id, _)| id.is_some());
    let mut header = vec!["order_ratio", "q1", "median", "q3", "count"];
    if per_image {
        header.insert(0, "image_id");
    }
    w.write_record(&header).map_err(io)?;
    for (id, d) in dists {
        for r in &d.rows {
            let mut rec = vec![num(r.order_ratio), opt(r.q1), opt(r.median), opt(r.q3), r.count.to_string()];
            if per_image {
                rec.insert(0, id.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `image_id,avg_interaction,label,predicted,correct`
pub fn write_averages_csv<W: Write>(out: W, rows: &[ImageAverage]) -> Result<(), PipelineError> {
    let mut w = writer(out);
    w.write_record(["image_id", "avg_interaction", "label", "predicted", "correct"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.image_id.to_string(),
            opt(r.average),
            r.label.to_string(),
            r.predicted.map(|p| p.to_string()).unwrap_or_else(|| "NA".into()),
            r.correct().map(|c| c.to_string()).unwrap_or_else(|| "NA".into()),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// `order_ratio,J`
pub fn write_strength_csv<W: Write>(out: W, strength: &[(f64, f64)]) -> Result<(), PipelineError> {
    let mut w = writer(out);
    w.write_record(["order_ratio", "J"]).map_err(io)?;
    for (r, j) in strength {
        w.write_record([num(*r), num(*j)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// `bin_lo,bin_hi,count`
pub fn write_histogram_csv<W: Write>(out: W, h: &Histogram) -> Result<(), PipelineError> {
    let mut w = writer(out);
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(io)?;
    for (k, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.spec.edges(k);
        w.write_record([num(lo), num(hi), c.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::order_distribution;

    #[test]
    fn sample_csv_layout() {
        let s = InteractionSample {
            image_id: 3,
            pair_index: 0,
            i: 1,
            j: 2,
            order_ratio: 0.05,
            order: 1,
            context_id: 7,
            value: -0.5,
        };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "image_id,i,j,order_ratio,s,context_id,delta_f\n3,1,2,0.05,1,7,-0.5\n"
        );

        let d = order_distribution(&[s], &[0.05, 0.1]);
        let mut buf = Vec::new();
        write_order_distribution_csv(&mut buf, &[(None, &d)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "order_ratio,q1,median,q3,count\n0.05,-0.5,-0.5,-0.5,1\n0.1,NA,NA,NA,0\n"
        );
    }
}
