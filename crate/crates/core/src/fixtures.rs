//! Small hand-built instances with frozen expected outcomes: a batch
//! delete, a buffer rewiring, and a merge with its full event trace.

use std::collections::BTreeSet;

use crate::key::Key;
use crate::skiplist::SkipList;

/// Names accepted by `--fixture`.
pub const NAMES: [&str; 3] = ["delete", "buffer", "wave"];

/// Level-by-level key lists, top level first, sentinels included.
pub fn levels(list: &SkipList) -> Vec<String> {
    (0..=list.top())
        .rev()
        .map(|l| {
            list.level_keys(l)
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Clean list: 13 reaches level 3, 50 level 1, 30 sits on the base level.
pub fn wave_clean() -> SkipList {
    SkipList::oracle_build(&[13, 30, 50], &[3, 0, 1]).unwrap()
}

/// Buffer whose top group is {ls, 23, 98, rs}; 25 hangs below 23, and 1
/// and 55 sit on the base level.
pub fn wave_buffer() -> SkipList {
    SkipList::build_between(
        Key::BufNegInf,
        Key::BufPosInf,
        &[1, 23, 25, 55, 98],
        &[0, 3, 1, 0, 3],
    )
    .unwrap()
}

/// Golden event trace of merging [`wave_buffer`] into [`wave_clean`].
pub const WAVE_TRACE: &str = "\
0 ls start 3 -inf\n\
0 ls split 3 13\n\
1 ls merged_at_level 3 -inf\n\
2 ls move_down 2 -inf\n\
3 ls merged_at_level 2 -inf\n\
4 ls move_down 1 -inf\n\
4 23 merged_at_level 3 13\n\
5 ls merged_at_level 1 -inf\n\
5 23 move_down 2 13\n\
6 ls move_down 0 -inf\n\
6 23 merged_at_level 2 13\n\
7 ls merged_at_level 0 -inf\n\
7 ls done 0 -inf\n\
7 23 move_down 1 13\n\
7 23 split 1 50\n\
8 1 start 0 ls early\n\
8 23 merged_at_level 1 13\n\
9 25 start 1 23 early\n\
9 1 merged_at_level 0 ls\n\
9 1 done 0 ls\n\
9 23 move_down 0 13\n\
10 23 merged_at_level 0 13\n\
10 23 done 0 13\n\
10 25 merged_at_level 1 23\n\
11 25 move_down 0 23\n\
11 98 merged_at_level 1 50\n\
12 25 merged_at_level 0 23\n\
12 25 done 0 23\n\
12 98 move_down 0 50\n\
13 98 merged_at_level 0 50\n\
13 98 done 0 50\n\
14 55 start 0 50\n\
15 55 merged_at_level 0 50\n\
15 55 done 0 50\n\
";

/// Levels of the merged list.
pub const WAVE_RESULT: [&str; 4] = [
    "-inf 13 23 98 +inf",
    "-inf 13 23 98 +inf",
    "-inf 13 23 25 50 98 +inf",
    "-inf 1 13 23 25 30 50 55 98 +inf",
];

/// Delete instance: 11 towers, five of them red, including a red run on
/// the base level and a red tower that is the only key on its top level.
pub fn delete_list() -> (SkipList, BTreeSet<Key>) {
    let list = SkipList::oracle_build(
        &[3, 8, 12, 17, 21, 26, 30, 34, 41, 47, 52],
        &[1, 0, 2, 0, 0, 3, 1, 0, 2, 0, 1],
    )
    .unwrap();
    let reds = [8, 17, 21, 26, 47].into_iter().map(Key::Id).collect();
    (list, reds)
}

/// Levels after removing the reds; the top level empties and goes away.
pub const DELETE_RESULT: [&str; 3] = [
    "-inf 12 41 +inf",
    "-inf 3 12 30 41 52 +inf",
    "-inf 3 12 30 34 41 52 +inf",
];

/// Buffer rewiring instance: sorted joiners with their heights.
pub fn buffer_input() -> Vec<(Key, u32)> {
    [
        (4, 1),
        (9, 0),
        (15, 2),
        (22, 0),
        (27, 0),
        (33, 1),
        (40, 0),
        (46, 2),
    ]
    .into_iter()
    .map(|(k, h)| (Key::Id(k), h))
    .collect()
}

/// Levels once fill-in copies are bridged over.
pub const BUFFER_RESULT: [&str; 3] = [
    "ls 15 46 rs",
    "ls 4 15 33 46 rs",
    "ls 4 9 15 22 27 33 40 46 rs",
];
