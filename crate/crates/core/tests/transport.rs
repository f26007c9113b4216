use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Cursor;

use relodkit::transport::{read_frame, write_frame, ActCommand, Delivery, Link, LinkModel, Message, Payload};
use relodkit::{SeedTree, Stream, Timestamp};

const N: u64 = 1_000_000;

/// Sends `N` messages 1 ms apart through `model`, delivers them in arrival
/// order (ties by send order) into one byte stream and returns the sequence
/// numbers read back.
fn arrivals(model: LinkModel, seed: u64) -> Vec<u64> {
    let mut link = Link::new(model, SeedTree::new(seed).stream(Stream::LinkUplink));
    let mut heap = BinaryHeap::new();
    for seq in 0..N {
        match link.send(Timestamp::from_millis(seq)) {
            Delivery::At(t) => heap.push(Reverse((t, seq))),
            Delivery::Dropped => {}
        }
    }
    let mut wire = Vec::new();
    while let Some(Reverse((t, seq))) = heap.pop() {
        let payload = if seq % 3 == 0 {
            Payload::Act(ActCommand { obs_seq: seq, action: vec![0.5, -0.25], policy_version: seq / 7, log_prob: -1.0 })
        } else {
            Payload::Heartbeat
        };
        write_frame(&mut wire, &Message::new(seq, t, payload)).unwrap();
    }
    let mut r = Cursor::new(wire);
    let mut seqs = Vec::new();
    while let Some(m) = read_frame(&mut r).unwrap() {
        if let Payload::Act(a) = &m.payload {
            assert_eq!(a.obs_seq, m.seq);
        }
        seqs.push(m.seq);
    }
    seqs
}

fn gaps(seqs: &[u64]) -> usize {
    let mut expected = 0;
    let mut bad = 0;
    for &s in seqs {
        if s != expected {
            bad += 1;
        }
        expected = s + 1;
    }
    bad
}

#[test]
fn fifo_links_deliver_exactly_once_in_order() {
    for (i, model) in [LinkModel::ideal(), LinkModel::wired(), LinkModel::wifi()].into_iter().enumerate() {
        assert_eq!(model.drop_rate, 0.0);
        assert!(!model.reorder);
        let seqs = arrivals(model, i as u64);
        assert_eq!(seqs.len() as u64, N);
        assert_eq!(gaps(&seqs), 0, "preset {i}");
    }
}

#[test]
fn the_scan_sees_reordering_and_loss() {
    let reordering = LinkModel { reorder: true, ..LinkModel::wifi() };
    let seqs = arrivals(reordering, 9);
    assert_eq!(seqs.len() as u64, N);
    assert!(gaps(&seqs) > 1000);

    let lossy = LinkModel { drop_rate: 0.01, ..LinkModel::wired() };
    let seqs = arrivals(lossy, 9);
    assert!(seqs.len() < N as usize);
    assert!(gaps(&seqs) > 1000);
}
