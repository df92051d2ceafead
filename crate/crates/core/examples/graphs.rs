//! Builds the three graphs for a small hand-made scene and prints them.

use stagnet::graph::{frame_adjacency, spatial_adjacency, temporal_adjacency, AdjacencyMatrix, BoundingBox, ObjectRef, SpatialNorm};

fn show(title: &str, a: &AdjacencyMatrix) {
    println!("{title} ({}x{}, {} edges, total {:.3})", a.rows(), a.cols(), a.nonzero_count(), a.total());
    for i in 0..a.rows() {
        let row: Vec<String> = (0..a.cols()).map(|j| format!("{:6.3}", a.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three cars and an empty slot.
    let boxes = [
        BoundingBox::new(100.0, 200.0, 40.0, 30.0),
        BoundingBox::new(130.0, 210.0, 40.0, 30.0),
        BoundingBox::new(600.0, 180.0, 60.0, 40.0),
        BoundingBox::default(),
    ];
    let mask = [true, true, true, false];
    show("spatial, global norm", &spatial_adjacency(&boxes, &mask, SpatialNorm::Global)?);
    show("spatial, row norm", &spatial_adjacency(&boxes, &mask, SpatialNorm::RowWise)?);

    let prev_feats = [vec![1.0, 0.0, 0.2], vec![0.0, 1.0, 0.0], vec![0.5, 0.5, 0.5]];
    let curr_feats = [vec![0.9, 0.1, 0.2], vec![0.1, 1.0, 0.1]];
    let prev: Vec<ObjectRef> = prev_feats
        .iter()
        .zip([0, 0, 1])
        .map(|(f, class_id)| ObjectRef { class_id, feature: f, valid: true })
        .collect();
    let curr: Vec<ObjectRef> = curr_feats
        .iter()
        .zip([0, 0])
        .map(|(f, class_id)| ObjectRef { class_id, feature: f, valid: true })
        .collect();
    show("temporal, current x previous", &temporal_adjacency(&curr, &prev)?);

    show("frame graph, 6 frames, window 2", &frame_adjacency(6, 2)?);
    Ok(())
}
