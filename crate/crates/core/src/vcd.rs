//! Value-change-dump export of simulation traces (VCD-compatible subset:
//! timescale line, scalar var declarations, `#time` / value-id lines).

use std::io::{self, Write};

use crate::netlist::Netlist;
use crate::sim::Trace;

fn id_code(mut index: usize) -> String {
    // Printable identifier characters '!'..='~'.
    let mut out = String::new();
    loop {
        out.push((b'!' + (index % 94) as u8) as char);
        index /= 94;
        if index == 0 {
            break;
        }
    }
    out
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect()
}

/// Writes the whole trace as a VCD file with one scalar wire per net.
pub fn write_vcd(netlist: &Netlist, trace: &Trace, w: &mut dyn Write) -> io::Result<()> {
    writeln!(w, "$timescale 1ps $end")?;
    writeln!(w, "$scope module top $end")?;
    for net in netlist.net_ids() {
        writeln!(
            w,
            "$var wire 1 {} {} $end",
            id_code(net.index()),
            sanitize(&netlist.net_label(net))
        )?;
    }
    writeln!(w, "$upscope $end")?;
    writeln!(w, "$enddefinitions $end")?;

    writeln!(w, "#{}", trace.start_time)?;
    writeln!(w, "$dumpvars")?;
    for net in netlist.net_ids() {
        let v = trace.initial[net.index()];
        writeln!(w, "{}{}", u8::from(v), id_code(net.index()))?;
    }
    writeln!(w, "$end")?;

    let mut events: Vec<(u64, usize, bool)> = Vec::new();
    for net in netlist.net_ids() {
        for &(t, v) in &trace.transitions[net.index()] {
            events.push((t, net.index(), v));
        }
    }
    events.sort_unstable();
    let mut current = trace.start_time;
    let mut open = true; // the #start line is already written
    for (t, net, v) in events {
        if t != current || !open {
            writeln!(w, "#{t}")?;
            current = t;
            open = true;
        }
        writeln!(w, "{}{}", u8::from(v), id_code(net))?;
    }
    Ok(())
}
