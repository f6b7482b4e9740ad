"""Command-line interface.

    glc encode -i IMG -o OUT.glc -m CKPT -q 2 [--coder reference|native]
    glc decode -i IN.glc -o OUT.png -m CKPT [--decoder STYLE.pt]
    glc eval -d DIR -m CKPT -q 0,1,2,3 [--patches] [--report out.json]
    glc train --stage 1 --config cfg.yaml -o out.pt [--resume CKPT] ...
    glc bdrate --ref a.json --test b.json --metric ms_ssim
    glc app train-restoration|encode-restoration|train-style ...
"""

from __future__ import annotations

import argparse
import sys

import numpy as np
import torch


def _add_coder_arg(p):
    p.add_argument("--coder", choices=["reference", "native"], default=None,
                   help="entropy coder backend (default: GLC_CODER env or reference)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glc", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress an image to a .glc stream")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-m", "--model", required=True, help="codec checkpoint")
    p.add_argument("-q", "--rate-index", type=int, default=0)
    p.add_argument("--dump-code", help="write the quantized code to this .npy for debugging")
    _add_coder_arg(p)

    p = sub.add_parser("decode", help="decompress a .glc stream to an image")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--decoder", help="alternate decoder checkpoint (e.g. stylization)")
    p.add_argument("--dump-code", help="write the quantized code to this .npy for debugging")
    _add_coder_arg(p)

    p = sub.add_parser("eval", help="rate-distortion evaluation over a directory")
    p.add_argument("-d", "--dataset", required=True)
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-q", "--rate-indices", default="0,1,2,3")
    p.add_argument("--patches", action="store_true",
                   help="evaluate on 256x256 extracted patches instead of full images")
    p.add_argument("--report", help="write the full report as JSON")
    _add_coder_arg(p)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--config", help="model config YAML (stage 1)")
    p.add_argument("--resume", help="checkpoint from the previous stage (or same stage)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--data", help="directory of training images")
    p.add_argument("--synthetic", type=int, default=0,
                   help="train on N synthetic toy images instead of --data")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hyper-prior", choices=["categorical", "factorized"],
                   default="categorical")
    p.add_argument("--no-code-prediction", action="store_true")
    p.add_argument("--log", help="append JSON-lines metrics here")

    p = sub.add_parser("bdrate", help="Bjontegaard delta-rate between two eval reports")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", default="ms_ssim")

    app = sub.add_parser("app", help="latent-space applications")
    app_sub = app.add_subparsers(dest="app_command", required=True)

    p = app_sub.add_parser("train-restoration")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--data", help="directory of clean training images")
    p.add_argument("--synthetic", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--sigma", type=float, default=20.0 / 255.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = app_sub.add_parser("encode-restoration")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("-m", "--model", required=True)
    p.add_argument("--restorer", required=True, help="restoration encoder checkpoint")
    p.add_argument("-q", "--rate-index", type=int, default=0)
    _add_coder_arg(p)

    p = app_sub.add_parser("train-style")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--style", required=True, help="style image file")
    p.add_argument("--data", help="directory of content images")
    p.add_argument("--synthetic", type=int, default=0)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--style-weight", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _load_dataset(args) -> np.ndarray:
    from .data import list_images, load_image, synthetic_images

    if args.synthetic:
        return synthetic_images(args.synthetic, size=args.image_size, seed=args.seed)
    if not args.data:
        raise SystemExit("provide --data DIR or --synthetic N")
    files = list_images(args.data)
    if not files:
        raise SystemExit(f"no images found in {args.data}")
    return np.stack([load_image(f) for f in files])


def cmd_encode(args) -> int:
    from .codec import compressed_bpp, encode_image, get_coder, load_checkpoint
    from .data import load_image

    model, _ = load_checkpoint(args.model)
    image = torch.from_numpy(load_image(args.input))
    blob, debug = encode_image(model, image, q=args.rate_index,
                               coder=get_coder(args.coder), return_debug=True)
    with open(args.output, "wb") as fh:
        fh.write(blob)
    if args.dump_code:
        np.save(args.dump_code, debug["y_hat"].numpy())
    bpp = compressed_bpp(blob, image.shape[0], image.shape[1])
    print(f"{args.output}: {len(blob)} bytes, {bpp:.4f} bpp")
    return 0


def cmd_decode(args) -> int:
    from .applications import load_app_checkpoint
    from .codec import decode_image, get_coder, load_checkpoint
    from .data import save_image

    model, _ = load_checkpoint(args.model)
    decoder = load_app_checkpoint(args.decoder, "style") if args.decoder else None
    with open(args.input, "rb") as fh:
        blob = fh.read()
    image, debug = decode_image(model, blob, coder=get_coder(args.coder),
                                decoder_override=decoder, return_debug=True)
    save_image(args.output, image.numpy())
    if args.dump_code:
        np.save(args.dump_code, debug["y_hat"].numpy())
    print(f"{args.output}: {image.shape[1]}x{image.shape[0]}")
    return 0


def cmd_eval(args) -> int:
    from .codec import get_coder, load_checkpoint
    from .data import list_images, load_image
    from .evaluate import evaluate_model, extract_eval_patches

    model, _ = load_checkpoint(args.model)
    files = list_images(args.dataset)
    if not files:
        raise SystemExit(f"no images found in {args.dataset}")
    images = [load_image(f) for f in files]
    names = files
    if args.patches:
        patched, pnames = [], []
        for f, img in zip(files, images):
            for k, patch in enumerate(extract_eval_patches(img)):
                patched.append(patch)
                pnames.append(f"{f}#p{k}")
        if not patched:
            raise SystemExit("no patches extracted; images smaller than 256x256")
        images, names = patched, pnames
    q_list = [int(tok) for tok in args.rate_indices.split(",") if tok != ""]
    report = evaluate_model(model, images, q_list, coder=get_coder(args.coder),
                            image_names=names)
    for row in report.aggregates:
        m = row["metrics"]
        print(f"q={row['q']}: bpp={row['bpp']:.4f} psnr={m['psnr']:.2f} "
              f"ms_ssim={m['ms_ssim']:.4f} latent_mse={m['latent_mse']:.5f}")
    if args.report:
        report.to_json(args.report)
    return 0


def cmd_train(args) -> int:
    from .config import load_config
    from .training import StageConfig, train_stage

    dataset = _load_dataset(args)
    stage = {1: "I", 2: "II", 3: "III"}[args.stage]
    model_config = load_config(args.config) if args.config else None
    if stage == "I" and model_config is None and args.resume is None:
        raise SystemExit("stage 1 needs --config (or --resume)")
    cfg = StageConfig(stage=stage, steps=args.steps, batch_size=args.batch_size,
                      lr=args.lr, seed=args.seed, hyper_prior=args.hyper_prior,
                      code_prediction=not args.no_code_prediction)
    _, _, log = train_stage(cfg, dataset, checkpoint_in=args.resume,
                            checkpoint_out=args.output, model_config=model_config,
                            log_path=args.log)
    last = log.rows[-1] if log.rows else {}
    print(f"stage {stage} done: {args.output}"
          + (f" (final total {last.get('total', float('nan')):.4f})" if last else ""))
    return 0


def cmd_bdrate(args) -> int:
    from .evaluate import EvalReport, bd_rate

    ref = EvalReport.from_json(args.ref)
    test = EvalReport.from_json(args.test)
    delta = bd_rate(ref.curve(args.metric), test.curve(args.metric), args.metric)
    print(f"BD-rate ({args.metric}): {delta:+.2f}%")
    return 0


def cmd_app(args) -> int:
    from .applications import (
        encode_restorative,
        gaussian_noise,
        load_app_checkpoint,
        make_noisy_pairs,
        save_app_checkpoint,
        train_restoration_encoder,
        train_style_decoder,
    )
    from .codec import compressed_bpp, get_coder, load_checkpoint
    from .data import load_image

    model, _ = load_checkpoint(args.model)
    if args.app_command == "train-restoration":
        clean = _load_dataset(args)
        rng_sigma = args.sigma

        def degrade(rng, img):
            return gaussian_noise(rng, img, sigma=rng_sigma)

        distorted, clean = make_noisy_pairs(clean, seed=args.seed, degradation=degrade)
        restorer = train_restoration_encoder(distorted, clean, model,
                                             steps=args.steps, seed=args.seed)
        save_app_checkpoint(args.output, restorer, "restoration", model.config)
        print(f"restoration encoder saved: {args.output}")
        return 0
    if args.app_command == "encode-restoration":
        restorer = load_app_checkpoint(args.restorer, "restoration")
        image = load_image(args.input)
        blob = encode_restorative(model, restorer, image, q=args.rate_index,
                                  coder=get_coder(args.coder))
        with open(args.output, "wb") as fh:
            fh.write(blob)
        print(f"{args.output}: {len(blob)} bytes, "
              f"{compressed_bpp(blob, image.shape[0], image.shape[1]):.4f} bpp")
        return 0
    if args.app_command == "train-style":
        content = _load_dataset(args)
        style = load_image(args.style)
        decoder = train_style_decoder(style, content, model, steps=args.steps,
                                      style_weight=args.style_weight, seed=args.seed)
        save_app_checkpoint(args.output, decoder, "style", model.config)
        print(f"stylization decoder saved: {args.output}")
        return 0
    raise SystemExit(f"unknown app command {args.app_command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "encode": cmd_encode,
        "decode": cmd_decode,
        "eval": cmd_eval,
        "train": cmd_train,
        "bdrate": cmd_bdrate,
        "app": cmd_app,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
