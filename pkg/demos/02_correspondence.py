"""Transfer part labels from an annotated gallery image to a query.

The demo walks the full correspondence route. Both images are embedded
and the nearest gallery exemplar of the predicted class is retrieved.
Their multi-layer feature maps become hyperimages, every query position
is matched to a gallery position with offset-bin vote reweighting, and
each query superpixel then reads its label from the gallery annotation
at its matched coordinate. The terminal table shows what each segment
was called and how confident its match was.
"""

from pathlib import Path

from gepc.annotations import PartAnnotation
from gepc.backends import warmcool_backend
from gepc.correspondence import (
    OffsetSpace,
    build_hyperimage,
    match_hyperpixels,
    transfer_part_labels,
)
from gepc.imaging import load_image, slic_segment
from gepc.retrieval import GalleryEntry, GalleryIndex, nearest_gallery

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "e2e"
LAYERS = (0, 1)


def gallery_index():
    entries = []
    for path in sorted((FIXTURES / "gallery").glob("*.png")):
        image = load_image(path)
        backend = warmcool_backend(image)
        entries.append(
            GalleryEntry(
                image_id=path.stem,
                class_id=backend.classify(image).top1(),
                embedding=backend.pooled_embedding(image),
                annotation_path=f"{path.stem}.json",
            )
        )
    return GalleryIndex(entries)


def main():
    index = gallery_index()
    print(f"gallery: {[e.image_id for e in index.entries]}")

    query_path = FIXTURES / "images" / "warm_03.png"
    query = load_image(query_path)
    backend = warmcool_backend(query)
    predicted = backend.classify(query).top1()
    ranked = nearest_gallery(backend.pooled_embedding(query), index, class_filter=predicted)
    gallery_id, similarity = ranked[0]
    print(
        f"query {query_path.stem}: predicted class {predicted}, "
        f"nearest gallery {gallery_id} (cosine {similarity:.4f})"
    )

    gallery_image = load_image(FIXTURES / "gallery" / f"{gallery_id}.png")
    gallery_backend = warmcool_backend(gallery_image)
    query_hi = build_hyperimage(backend.extract_features(query, LAYERS))
    gallery_hi = build_hyperimage(gallery_backend.extract_features(gallery_image, LAYERS))
    print(
        f"hyperimages: query {query_hi.base_h}x{query_hi.base_w}x{query_hi.depth}, "
        f"gallery {gallery_hi.base_h}x{gallery_hi.base_w}x{gallery_hi.depth}"
    )

    matches = match_hyperpixels(query_hi, gallery_hi, OffsetSpace(16), d=1.0)
    seg = slic_segment(query, n_segments=18)
    annotation = PartAnnotation.load(FIXTURES / "annotations" / f"{gallery_id}.json")
    labeling = transfer_part_labels(seg, query_hi, gallery_hi, annotation, matches)

    print(f"\ntransferred labels for {seg.n_segments} segments:")
    print("  id  label       confidence")
    for sid, (label, conf) in enumerate(zip(labeling.labels, labeling.confidences)):
        print(f"  {sid:2d}  {label:<10s}  {conf:10.4f}")
    named = sum(1 for l in labeling.labels if l != "background")
    print(f"\n{named} of {seg.n_segments} segments received a part name")


if __name__ == "__main__":
    main()
