"""Command-line front end: embed a class-per-directory image folder into the
training CLI's dataset CSV formats.

    clip-extract --images data/pets --out-dir out/
    clip-extract --images data/pets --backend tiny --template "a photo of a [CLS]."
"""

from __future__ import annotations

import argparse
import os
import sys

from .encoders import PLACEHOLDER, ExtractorError, get_encoder
from .extract import (
    ExtractionJob,
    classes_from_directory,
    extract_class_text_embeddings,
    extract_image_embeddings,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clip-extract", description=__doc__)
    parser.add_argument("--images", required=True, help="folder with one subdirectory per class")
    parser.add_argument(
        "--class-names", default=None,
        help="comma-separated class names (default: sorted subdirectory names)",
    )
    parser.add_argument(
        "--template", default=f"a photo of a {PLACEHOLDER}.",
        help=f"prompt template containing the {PLACEHOLDER} placeholder",
    )
    parser.add_argument("--out-dir", default="out", help="directory for the two CSVs")
    parser.add_argument("--out-images", default=None, help="override images CSV path")
    parser.add_argument("--out-classes", default=None, help="override class CSV path")
    parser.add_argument("--backend", default="clip", choices=("clip", "tiny"))
    parser.add_argument("--model", default="openai/clip-vit-base-patch32")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        class_names = (
            [n.strip() for n in args.class_names.split(",") if n.strip()]
            if args.class_names
            else classes_from_directory(args.images)
        )
        os.makedirs(args.out_dir, exist_ok=True)
        job = ExtractionJob(
            dataset_dir=args.images,
            class_names=class_names,
            template=args.template,
            out_images=args.out_images or os.path.join(args.out_dir, "images_train.csv"),
            out_classes=args.out_classes or os.path.join(args.out_dir, "class_texts.csv"),
            batch_size=args.batch_size,
            device=args.device,
        )
        encoder = get_encoder(args.backend, args.model, args.device, args.batch_size)
        classes_path = extract_class_text_embeddings(job, encoder)
        images_path, written, skipped = extract_image_embeddings(job, encoder)
        print(
            f"embedded {written} image(s) over {len(class_names)} classes "
            f"({skipped} skipped) with the {args.backend} backend"
        )
        print(f"wrote {classes_path} and {images_path}")
        return 0
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
