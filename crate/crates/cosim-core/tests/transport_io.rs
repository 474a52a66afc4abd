//! Framed-socket integration over real TCP.

use cosim_core::time::{SimTime, TimestampedSample};
use cosim_core::transport::{
    decode_frame, encode_frame, Frame, FrameKind, FramedListener, FramedSocket, SeqTracker,
    TransportError,
};

fn frame(seq: u64, value: f64) -> Frame {
    Frame::new(
        FrameKind::Measurement,
        seq,
        "peer_a",
        SimTime::from_millis(seq),
        vec![TimestampedSample::new("v", SimTime::from_millis(seq), value).unwrap()],
    )
    .unwrap()
}

fn pair() -> (FramedSocket, FramedSocket) {
    let listener = FramedListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let client = std::thread::spawn(move || FramedSocket::connect(addr).unwrap());
    let server_side = listener.accept().unwrap();
    (client.join().unwrap(), server_side)
}

fn poll_until(sock: &mut FramedSocket, want: usize) -> Vec<Frame> {
    let mut got = Vec::new();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
    while got.len() < want && std::time::Instant::now() < deadline {
        match sock.poll() {
            Ok(frames) => got.extend(frames),
            Err(TransportError::Disconnected) => break,
            Err(e) => panic!("poll failed: {e}"),
        }
        std::thread::sleep(std::time::Duration::from_millis(1));
    }
    got
}

#[test]
fn send_then_poll_delivers_frame() {
    let (mut a, mut b) = pair();
    a.send(&frame(1, 0.5)).unwrap();
    let got = poll_until(&mut b, 1);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0], frame(1, 0.5));
}

#[test]
fn two_frames_in_one_segment_arrive_in_order() {
    use std::io::Write;
    let listener = FramedListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let writer = std::thread::spawn(move || {
        // Raw stream write of two concatenated frames: one TCP segment.
        let mut raw = std::net::TcpStream::connect(addr).unwrap();
        let mut bytes = encode_frame(&frame(1, 1.0)).unwrap();
        bytes.extend_from_slice(&encode_frame(&frame(2, 2.0)).unwrap());
        raw.write_all(&bytes).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(200));
    });
    let mut b = listener.accept().unwrap();
    let got = poll_until(&mut b, 2);
    writer.join().unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].seq, 1);
    assert_eq!(got[1].seq, 2);
}

#[test]
fn disconnect_is_a_distinct_condition() {
    let (a, mut b) = pair();
    drop(a);
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
    loop {
        match b.poll() {
            Err(TransportError::Disconnected) => break,
            Ok(frames) => assert!(frames.is_empty()),
            Err(e) => panic!("unexpected error {e}"),
        }
        assert!(std::time::Instant::now() < deadline, "never saw disconnect");
        std::thread::sleep(std::time::Duration::from_millis(1));
    }
}

#[test]
fn corrupt_payload_skipped_via_length_prefix() {
    use std::io::Write;
    let listener = FramedListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let writer = std::thread::spawn(move || {
        let mut raw = std::net::TcpStream::connect(addr).unwrap();
        // A length-prefixed blob with bad magic, then a good frame.
        let mut bytes = vec![0, 0, 0, 8];
        bytes.extend_from_slice(b"XXXXXXXX");
        bytes.extend_from_slice(&encode_frame(&frame(7, 7.0)).unwrap());
        raw.write_all(&bytes).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(200));
    });
    let mut b = listener.accept().unwrap();
    let got = poll_until(&mut b, 1);
    writer.join().unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].seq, 7);
    assert_eq!(b.skipped(), 1);
}

#[test]
fn split_halves_work_concurrently() {
    let (a, mut b) = pair();
    let (mut tx, mut rx) = a.into_split().unwrap();
    // Writer thread pushes while the same connection's reader polls.
    let writer = std::thread::spawn(move || {
        for k in 1..=100u64 {
            tx.send(&frame(k, k as f64)).unwrap();
        }
    });
    let echo = std::thread::spawn(move || {
        let got = poll_until(&mut b, 100);
        for f in &got {
            b.send(f).unwrap();
        }
        got.len()
    });
    let mut tracker = SeqTracker::new();
    let mut echoed = Vec::new();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(3);
    while echoed.len() < 100 && std::time::Instant::now() < deadline {
        if let Ok(frames) = rx.poll() {
            echoed.extend(frames);
        }
        std::thread::sleep(std::time::Duration::from_millis(1));
    }
    writer.join().unwrap();
    assert_eq!(echo.join().unwrap(), 100);
    assert_eq!(echoed.len(), 100);
    for f in &echoed {
        tracker.observe(f).unwrap();
    }
    assert_eq!(tracker.gaps(), 0);
}

#[test]
fn stream_decode_matches_unit_decode() {
    let f = frame(9, -4.25);
    let bytes = encode_frame(&f).unwrap();
    let (decoded, consumed) = decode_frame(&bytes).unwrap().unwrap();
    assert_eq!(consumed, bytes.len());
    assert_eq!(decoded, f);
}
