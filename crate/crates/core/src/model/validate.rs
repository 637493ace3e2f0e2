use std::collections::HashSet;
use std::fmt;

use serde::ser::SerializeStruct;
use serde::Serialize;

use super::{Mode, ProblemSpec, Slot, SlotKind, ROW_SUM_TOLERANCE};

/// One violated invariant of a problem.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape {
        what: String,
        expected: usize,
        found: usize,
    },
    EmptySpace {
        what: String,
    },
    Labels {
        what: String,
    },
    InitialDistribution {
        detail: String,
    },
    TransitionRow {
        t: usize,
        x: usize,
        u: usize,
        detail: String,
    },
    ObservationRow {
        controller: usize,
        t: usize,
        x: usize,
        detail: String,
    },
    NonFiniteCost {
        t: usize,
        x: usize,
        u: usize,
    },
    Discount {
        detail: String,
    },
    NotTimeHomogeneous {
        what: String,
    },
    TimeVaryingProtocol {
        name: String,
    },
    ProtocolTable {
        controller: usize,
        t: usize,
        detail: String,
    },
    /// A message carries data the controller does not hold.
    MessageNotLocal {
        controller: usize,
        t: usize,
        m: usize,
        y: usize,
        u: usize,
        slot: Slot,
    },
    /// The next local memory holds data the controller does not hold.
    MemoryNotLocal {
        controller: usize,
        t: usize,
        m: usize,
        y: usize,
        u: usize,
        slot: Slot,
    },
    /// The next local memory keeps something that was just shared.
    MemoryOverlapsMessage {
        controller: usize,
        t: usize,
        m: usize,
        y: usize,
        u: usize,
        slot: Slot,
    },
}

fn slot_str(s: &Slot) -> String {
    let kind = match s.kind {
        SlotKind::Obs => "y",
        SlotKind::Act => "u",
    };
    if s.lag == 0 {
        format!("{kind}[t]={}", s.value)
    } else {
        format!("{kind}[t-{}]={}", s.lag, s.value)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { what, expected, found } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::EmptySpace { what } => write!(f, "{what} is empty"),
            Violation::Labels { what } => write!(f, "{what}: labels must be unique and match the cardinality"),
            Violation::InitialDistribution { detail } => write!(f, "initial distribution: {detail}"),
            Violation::TransitionRow { t, x, u, detail } => {
                write!(f, "transition kernel row (t={t}, x={x}, u={u}): {detail}")
            }
            Violation::ObservationRow { controller, t, x, detail } => {
                write!(f, "observation kernel of controller {controller} row (t={t}, x={x}): {detail}")
            }
            Violation::NonFiniteCost { t, x, u } => write!(f, "cost (t={t}, x={x}, u={u}) is not finite"),
            Violation::Discount { detail } => write!(f, "discount: {detail}"),
            Violation::NotTimeHomogeneous { what } => {
                write!(f, "discounted mode requires time-homogeneous {what}")
            }
            Violation::TimeVaryingProtocol { name } => write!(
                f,
                "discounted mode requires time-invariant memory spaces; protocol '{name}' has memory that changes with time"
            ),
            Violation::ProtocolTable { controller, t, detail } => {
                write!(f, "protocol of controller {controller} at t={t}: {detail}")
            }
            Violation::MessageNotLocal { controller, t, m, y, u, slot } => write!(
                f,
                "protocol of controller {controller} at t={t}, (m={m}, y={y}, u={u}): message carries {} which is not in the local information",
                slot_str(slot)
            ),
            Violation::MemoryNotLocal { controller, t, m, y, u, slot } => write!(
                f,
                "protocol of controller {controller} at t={t}, (m={m}, y={y}, u={u}): next local memory holds {} which is not in the local information",
                slot_str(slot)
            ),
            Violation::MemoryOverlapsMessage { controller, t, m, y, u, slot } => write!(
                f,
                "protocol of controller {controller} at t={t}, (m={m}, y={y}, u={u}): local memory overlaps shared memory, keeps {} that was just sent",
                slot_str(slot)
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl Serialize for ValidationReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ValidationReport", 2)?;
        s.serialize_field("valid", &self.is_valid())?;
        let lines: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        s.serialize_field("violations", &lines)?;
        s.end()
    }
}

fn check_len(report: &mut ValidationReport, what: impl FnOnce() -> String, expected: usize, found: usize) -> bool {
    if expected != found {
        report.push(Violation::Shape { what: what(), expected, found });
        false
    } else {
        true
    }
}

fn row_problem(row: &[f64]) -> Option<String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Some(format!("entry {p} is not a probability"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Some(format!("row sums to {sum}"));
    }
    None
}

/// Checks every invariant of `spec` and lists what fails.
pub fn validate_problem(spec: &ProblemSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = spec.n;
    if n == 0 {
        report.push(Violation::EmptySpace { what: "controller set".into() });
        return report;
    }
    let mut shape_ok = true;
    shape_ok &= check_len(&mut report, || "observation space list".into(), n, spec.obs_spaces.len());
    shape_ok &= check_len(&mut report, || "action space list".into(), n, spec.action_spaces.len());
    shape_ok &= check_len(&mut report, || "observation kernel list".into(), n, spec.obs_kernels.len());
    shape_ok &= check_len(&mut report, || "protocol controller list".into(), n, spec.protocol.controllers.len());
    if spec.horizon == 0 {
        report.push(Violation::EmptySpace { what: "horizon".into() });
        return report;
    }
    if !shape_ok {
        return report;
    }
    let slices = spec.horizon;
    for i in 0..n {
        shape_ok &= check_len(
            &mut report,
            || format!("observation spaces of controller {i}"),
            slices,
            spec.obs_spaces[i].len(),
        );
        shape_ok &=
            check_len(&mut report, || format!("action spaces of controller {i}"), slices, spec.action_spaces[i].len());
        shape_ok &= check_len(
            &mut report,
            || format!("observation kernels of controller {i}"),
            slices,
            spec.obs_kernels[i].len(),
        );
    }
    shape_ok &= check_len(&mut report, || "cost tables".into(), slices, spec.cost.len());
    let min_transitions = match spec.mode {
        Mode::Finite => slices - 1,
        Mode::Discounted => slices,
    };
    if spec.transition.len() != slices && spec.transition.len() != min_transitions {
        report.push(Violation::Shape {
            what: "transition kernels".into(),
            expected: slices,
            found: spec.transition.len(),
        });
        shape_ok = false;
    }
    if !shape_ok {
        return report;
    }

    // Spaces.
    let mut spaces_ok = true;
    let mut check_space = |report: &mut ValidationReport, what: String, space: &super::FiniteSpace| {
        if space.cardinality == 0 {
            report.push(Violation::EmptySpace { what: what.clone() });
            spaces_ok = false;
        }
        if let Some(labels) = &space.labels {
            let unique: HashSet<&String> = labels.iter().collect();
            if labels.len() != space.cardinality || unique.len() != labels.len() {
                report.push(Violation::Labels { what });
            }
        }
    };
    check_space(&mut report, "state space".into(), &spec.state_space);
    for i in 0..n {
        for t in 0..slices {
            check_space(&mut report, format!("observation space of controller {i} at t={t}"), &spec.obs_spaces[i][t]);
            check_space(&mut report, format!("action space of controller {i} at t={t}"), &spec.action_spaces[i][t]);
        }
    }
    if !spaces_ok {
        return report;
    }
    let nx = spec.num_states();
    let joint = |t: usize| -> usize { (0..n).map(|i| spec.action_spaces[i][t].cardinality).product() };

    if check_len(&mut report, || "initial distribution".into(), nx, spec.initial_dist.len()) {
        if let Some(detail) = row_problem(&spec.initial_dist) {
            report.push(Violation::InitialDistribution { detail });
        }
    }

    for (t, kernel) in spec.transition.iter().enumerate() {
        let nu = joint(t);
        if !check_len(&mut report, || format!("transition kernel rows at t={t}"), nx * nu, kernel.rows.len()) {
            continue;
        }
        for (r, row) in kernel.rows.iter().enumerate() {
            let (x, u) = (r / nu, r % nu);
            if row.len() != nx {
                report.push(Violation::TransitionRow {
                    t,
                    x,
                    u,
                    detail: format!("has {} entries, expected {nx}", row.len()),
                });
            } else if let Some(detail) = row_problem(row) {
                report.push(Violation::TransitionRow { t, x, u, detail });
            }
        }
    }

    for i in 0..n {
        for t in 0..slices {
            let kernel = &spec.obs_kernels[i][t];
            let ny = spec.obs_spaces[i][t].cardinality;
            if !check_len(
                &mut report,
                || format!("observation kernel rows of controller {i} at t={t}"),
                nx,
                kernel.rows.len(),
            ) {
                continue;
            }
            for (x, row) in kernel.rows.iter().enumerate() {
                if row.len() != ny {
                    report.push(Violation::ObservationRow {
                        controller: i,
                        t,
                        x,
                        detail: format!("has {} entries, expected {ny}", row.len()),
                    });
                } else if let Some(detail) = row_problem(row) {
                    report.push(Violation::ObservationRow { controller: i, t, x, detail });
                }
            }
        }
    }

    for (t, table) in spec.cost.iter().enumerate() {
        let nu = joint(t);
        if !check_len(&mut report, || format!("cost table at t={t}"), nx * nu, table.len()) {
            continue;
        }
        for (r, c) in table.iter().enumerate() {
            if !c.is_finite() {
                report.push(Violation::NonFiniteCost { t, x: r / nu, u: r % nu });
            }
        }
    }

    if spec.mode == Mode::Discounted {
        match spec.discount {
            None => report.push(Violation::Discount { detail: "discounted mode needs a discount factor".into() }),
            Some(b) if !(0.0..1.0).contains(&b) => {
                report.push(Violation::Discount { detail: format!("{b} is outside [0, 1)") })
            }
            Some(_) => {}
        }
        let homogeneous = |name: &str, same: bool, report: &mut ValidationReport| {
            if !same {
                report.push(Violation::NotTimeHomogeneous { what: name.into() });
            }
        };
        homogeneous("transition kernels", spec.transition.iter().all(|k| *k == spec.transition[0]), &mut report);
        homogeneous("cost tables", spec.cost.iter().all(|c| *c == spec.cost[0]), &mut report);
        for i in 0..n {
            homogeneous(
                &format!("observation kernels of controller {i}"),
                spec.obs_kernels[i].iter().all(|k| *k == spec.obs_kernels[i][0]),
                &mut report,
            );
            homogeneous(
                &format!("observation/action spaces of controller {i}"),
                spec.obs_spaces[i].iter().all(|s| s.cardinality == spec.obs_spaces[i][0].cardinality)
                    && spec.action_spaces[i].iter().all(|s| s.cardinality == spec.action_spaces[i][0].cardinality),
                &mut report,
            );
        }
        if !spec.protocol.is_stationary() {
            report.push(Violation::TimeVaryingProtocol { name: spec.protocol.name.clone() });
            return report;
        }
    }

    validate_protocol(spec, &mut report);
    report
}

const MAX_PROTOCOL_REPORTS: usize = 8;

fn validate_protocol(spec: &ProblemSpec, report: &mut ValidationReport) {
    let stationary = spec.protocol.is_stationary();
    let steps = match spec.mode {
        Mode::Finite => spec.horizon,
        Mode::Discounted => 1,
    };
    for (i, ctrl) in spec.protocol.controllers.iter().enumerate() {
        let (layers, stages) = if stationary { (1, 1) } else { (spec.horizon + 1, spec.horizon) };
        let mut ok = check_len(report, || format!("memory layers of controller {i}"), layers, ctrl.memory.len());
        ok &= check_len(report, || format!("protocol stages of controller {i}"), stages, ctrl.stages.len());
        if !ok {
            continue;
        }
        if !stationary && ctrl.memory[0].len() != 1 {
            report.push(Violation::ProtocolTable {
                controller: i,
                t: 0,
                detail: format!("initial local memory space has {} elements, expected 1", ctrl.memory[0].len()),
            });
        }
        if ctrl.memory[0].first().is_none_or(|m| !m.is_empty()) {
            report.push(Violation::ProtocolTable {
                controller: i,
                t: 0,
                detail: "memory element 0 must be the empty initial memory".into(),
            });
        }
        let card = |kind: SlotKind, time: usize| -> usize {
            let s = if stationary { 0 } else { time };
            match kind {
                SlotKind::Obs => spec.obs_spaces[i][s].cardinality,
                SlotKind::Act => spec.action_spaces[i][s].cardinality,
            }
        };
        // Witness sanity of every memory layer.
        for (layer, elements) in ctrl.memory.iter().enumerate() {
            let unique: HashSet<&Vec<Slot>> = elements.iter().collect();
            if elements.is_empty() || unique.len() != elements.len() {
                report.push(Violation::ProtocolTable {
                    controller: i,
                    t: layer,
                    detail: "memory elements must be non-empty in number and pairwise distinct".into(),
                });
            }
            for (m, slots) in elements.iter().enumerate() {
                for s in slots {
                    let bad_lag = s.lag == 0 || (!stationary && s.lag > layer);
                    if bad_lag || (!bad_lag && s.value >= card(s.kind, if stationary { 0 } else { layer - s.lag })) {
                        report.push(Violation::ProtocolTable {
                            controller: i,
                            t: layer,
                            detail: format!("memory element {m} has an impossible slot {}", slot_str(s)),
                        });
                    }
                }
            }
        }

        for t in 0..steps.min(ctrl.stages.len()) {
            let stage = &ctrl.stages[t];
            let here = if stationary { 0 } else { t };
            let next = if stationary { 0 } else { t + 1 };
            let (nm, nm_next) = (ctrl.memory[here].len(), ctrl.memory[next].len());
            let (ny, nu) =
                (spec.obs_spaces[i][spec.stage(t)].cardinality, spec.action_spaces[i][spec.stage(t)].cardinality);
            let rows = nm * ny * nu;
            let mut ok =
                check_len(report, || format!("message map of controller {i} at t={t}"), rows, stage.msg_map.len());
            ok &=
                check_len(report, || format!("memory update of controller {i} at t={t}"), rows, stage.mem_update.len());
            if stage.messages.first().is_none_or(|z| !z.is_empty()) {
                report.push(Violation::ProtocolTable {
                    controller: i,
                    t,
                    detail: "message 0 must be the empty message".into(),
                });
                ok = false;
            }
            if !ok {
                continue;
            }
            let mut emitted = 0;
            for m in 0..nm {
                for y in 0..ny {
                    for u in 0..nu {
                        if emitted >= MAX_PROTOCOL_REPORTS {
                            break;
                        }
                        let r = (m * ny + y) * nu + u;
                        let (z, m2) = (stage.msg_map[r], stage.mem_update[r]);
                        if z >= stage.messages.len() || m2 >= nm_next {
                            report.push(Violation::ProtocolTable {
                                controller: i,
                                t,
                                detail: format!("(m={m}, y={y}, u={u}) maps outside the message or memory space"),
                            });
                            emitted += 1;
                            continue;
                        }
                        let mut available: HashSet<Slot> = ctrl.memory[here][m].iter().copied().collect();
                        available.insert(Slot::obs(0, y));
                        available.insert(Slot::act(0, u));
                        let message = &stage.messages[z];
                        let sent: HashSet<(SlotKind, usize)> = message.iter().map(|s| (s.kind, s.lag)).collect();
                        for slot in message {
                            if !available.contains(slot) {
                                report.push(Violation::MessageNotLocal { controller: i, t, m, y, u, slot: *slot });
                                emitted += 1;
                            }
                        }
                        for slot in &ctrl.memory[next][m2] {
                            if slot.lag == 0 {
                                continue; // already reported as an impossible slot
                            }
                            let now = Slot { lag: slot.lag - 1, ..*slot };
                            if !available.contains(&now) {
                                report.push(Violation::MemoryNotLocal { controller: i, t, m, y, u, slot: now });
                                emitted += 1;
                            } else if sent.contains(&(now.kind, now.lag)) {
                                report.push(Violation::MemoryOverlapsMessage { controller: i, t, m, y, u, slot: now });
                                emitted += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}
