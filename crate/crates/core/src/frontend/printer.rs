use std::fmt::Write;

use super::ModelFile;

/// Model text that parses back to the same structure.
pub fn print_model(model: &ModelFile) -> String {
    let mut out = String::new();
    for s in &model.systems {
        let _ = writeln!(out, "system {}", s.name);
        let _ = writeln!(out, "  free {}", s.free_names().join(", "));
        if !s.states().is_empty() {
            let names: Vec<&str> = s.states().iter().map(|(n, _)| n.as_str()).collect();
            let _ = writeln!(out, "  state {}", names.join(", "));
        }
        for (n, der) in s.exo() {
            let _ = writeln!(out, "  exo {n} {{ der = {der} }}");
        }
        for (n, h) in s.states() {
            let _ = writeln!(out, "  eq {n}' = {h}");
        }
        for c in s.constraints() {
            let _ = writeln!(out, "  constraint {c} = 0");
        }
        out.push_str("end\n\n");
    }
    for p in &model.parametrizations {
        let _ = writeln!(out, "parametrization {} for {}", p.name, p.system);
        let _ = writeln!(out, "  arbitrary {}", p.arbitrary().join(", "));
        for c in p.charts() {
            let _ = writeln!(out, "  chart {}", c.name);
            for (x, e) in c.maps() {
                let _ = writeln!(out, "    {x} = {e}");
            }
            for e in c.excludes() {
                let _ = writeln!(out, "    exclude {e}");
            }
            for (v, (lo, hi)) in c.boxes() {
                let _ = writeln!(out, "    box {v} in [{lo:?}, {hi:?}]");
            }
            out.push_str("  end\n");
        }
        out.push_str("end\n\n");
    }
    for c in &model.candidates {
        let _ = writeln!(out, "candidate {} for {}", c.name, c.system);
        for o in &c.outputs {
            let _ = writeln!(out, "  output {o}");
        }
        for (x, e) in &c.inverse {
            let _ = writeln!(out, "  inverse {x} = {e}");
        }
        for e in &c.conditions {
            let _ = writeln!(out, "  where {e} != 0");
        }
        out.push_str("end\n\n");
    }
    out
}
