//! Bundled task suites. `train_small` pairs every scripted-policy defect
//! with tasks that expose it, plus structural twins that only succeed once
//! the matching rules exist; `test_small` mirrors the same structures under
//! fresh names for frozen-memory transfer runs.

use std::fs;
use std::path::Path;

use crate::textworld::TaskError;

const T01: &str = "\
task_id: t01
location: den1
location: hall1
agent_at: den1
receptacle: box1 loc=den1
object: key1 in=den1
goal: in(key1, box1)
";

const T02: &str = "\
task_id: t02
location: den2
location: hall2
agent_at: den2
receptacle: desk2 loc=den2
object: coin2 in=hall2
goal: in(coin2, desk2)
";

const T03: &str = "\
task_id: t03
location: kitchen3
location: wash3
agent_at: kitchen3
appliance: wash3 clean
receptacle: counter3 loc=kitchen3
object: dish3 in=kitchen3 dirty
goal: clean(dish3)
goal: in(dish3, counter3)
";

const T04: &str = "\
task_id: t04
location: atrium4
location: sink4
agent_at: atrium4
appliance: sink4 clean
receptacle: rack4 loc=atrium4
object: mug4 in=atrium4 dirty
goal: clean(mug4)
goal: in(mug4, rack4)
";

const T05: &str = "\
task_id: t05
location: kitchen5
location: stoveroom5
agent_at: kitchen5
appliance: stoveroom5 heat
receptacle: counter5 loc=kitchen5
object: pan5 in=kitchen5
goal: hot(pan5)
goal: in(pan5, counter5)
";

const T06: &str = "\
task_id: t06
location: pantry6
location: cellar6
agent_at: pantry6
appliance: cellar6 cool
receptacle: shelf6 loc=pantry6
object: juice6 in=pantry6
goal: cold(juice6)
goal: in(juice6, shelf6)
";

const T07: &str = "\
task_id: t07
location: kitchen7
location: den7
agent_at: kitchen7
receptacle: fridge7 loc=kitchen7 openable closed
receptacle: bin7 loc=kitchen7 openable closed
receptacle: table7 loc=kitchen7
object: egg7 in=fridge7
pool: egg7 fridge7,bin7
goal: in(egg7, table7)
";

const T08: &str = "\
task_id: t08
location: study8
location: hall8
agent_at: study8
receptacle: cabinet8 loc=study8 openable closed
receptacle: tray8 loc=study8
object: jar8 in=cabinet8
goal: in(jar8, tray8)
";

const T09: &str = "\
task_id: t09
location: laundry9
location: wash9
agent_at: laundry9
appliance: wash9 clean
receptacle: hamper9 loc=laundry9 openable closed
receptacle: shelf9 loc=laundry9
object: towel9 in=hamper9 dirty
goal: clean(towel9)
goal: in(towel9, shelf9)
";

const T10: &str = "\
task_id: t10
location: attic10
location: study10
agent_at: attic10
receptacle: basket10 loc=attic10 openable open
object: note10 in=basket10
goal: in(note10, study10)
";

const T11: &str = "\
task_id: t11
location: kitchen11
location: grill11
agent_at: kitchen11
appliance: grill11 heat
receptacle: board11 loc=kitchen11
object: pot11 in=kitchen11
goal: hot(pot11)
goal: in(pot11, board11)
";

const T12: &str = "\
task_id: t12
location: bar12
location: icebox12
agent_at: bar12
appliance: icebox12 cool
receptacle: tray12 loc=bar12
object: soda12 in=bar12
goal: cold(soda12)
goal: in(soda12, tray12)
";

const V01: &str = "\
task_id: v01
location: porch21
location: yard21
agent_at: porch21
receptacle: crate21 loc=porch21
object: rope21 in=porch21
goal: in(rope21, crate21)
";

const V02: &str = "\
task_id: v02
location: attic22
location: loft22
agent_at: attic22
receptacle: stand22 loc=attic22
object: lamp22 in=loft22
goal: in(lamp22, stand22)
";

const V03: &str = "\
task_id: v03
location: patio23
location: basin23
agent_at: patio23
appliance: basin23 clean
receptacle: bench23 loc=patio23
object: plate23 in=patio23 dirty
goal: clean(plate23)
goal: in(plate23, bench23)
";

const V04: &str = "\
task_id: v04
location: mudroom24
location: tub24
agent_at: mudroom24
appliance: tub24 clean
receptacle: hook24 loc=mudroom24
object: boot24 in=mudroom24 dirty
goal: clean(boot24)
goal: in(boot24, hook24)
";

const V05: &str = "\
task_id: v05
location: galley25
location: oven25
agent_at: galley25
appliance: oven25 heat
receptacle: ledge25 loc=galley25
object: bun25 in=galley25
goal: hot(bun25)
goal: in(bun25, ledge25)
";

const V06: &str = "\
task_id: v06
location: lounge26
location: freezer26
agent_at: lounge26
appliance: freezer26 cool
receptacle: coaster26 loc=lounge26
object: cola26 in=lounge26
goal: cold(cola26)
goal: in(cola26, coaster26)
";

const V07: &str = "\
task_id: v07
location: office27
location: den27
agent_at: office27
receptacle: safe27 loc=office27 openable closed
receptacle: locker27 loc=office27 openable closed
receptacle: desk27 loc=office27
object: badge27 in=safe27
pool: badge27 safe27,locker27
goal: in(badge27, desk27)
";

const V08: &str = "\
task_id: v08
location: cellar28
location: stair28
agent_at: cellar28
receptacle: trunk28 loc=cellar28 openable closed
receptacle: crate28 loc=cellar28
object: map28 in=trunk28
goal: in(map28, crate28)
";

pub const TRAIN_SMALL: &[(&str, &str)] = &[
    ("t01", T01),
    ("t02", T02),
    ("t03", T03),
    ("t04", T04),
    ("t05", T05),
    ("t06", T06),
    ("t07", T07),
    ("t08", T08),
    ("t09", T09),
    ("t10", T10),
    ("t11", T11),
    ("t12", T12),
];

pub const TEST_SMALL: &[(&str, &str)] = &[
    ("v01", V01),
    ("v02", V02),
    ("v03", V03),
    ("v04", V04),
    ("v05", V05),
    ("v06", V06),
    ("v07", V07),
    ("v08", V08),
];

pub const SUITE_NAMES: &[&str] = &["train_small", "test_small"];

pub fn suite(name: &str) -> Option<&'static [(&'static str, &'static str)]> {
    match name {
        "train_small" => Some(TRAIN_SMALL),
        "test_small" => Some(TEST_SMALL),
        _ => None,
    }
}

/// Write one `<task_id>.task` file per task; returns how many were written.
pub fn gen_tasks(name: &str, out_dir: &Path) -> Result<usize, TaskError> {
    let tasks = suite(name).ok_or_else(|| TaskError::Invalid {
        task_id: name.to_string(),
        message: format!("unknown suite; valid suites: {}", SUITE_NAMES.join(", ")),
    })?;
    fs::create_dir_all(out_dir)?;
    for (id, text) in tasks {
        fs::write(out_dir.join(format!("{id}.task")), text)?;
    }
    Ok(tasks.len())
}
