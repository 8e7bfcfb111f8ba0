"""Command-line entry point wiring the modules into reproducible workflows.

Every command resolves its configuration (config file + flag overrides),
writes the resolved form next to its outputs, and exits 0 on success, 1 on
runtime failure, 2 on usage/config errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, InputError, SchemaError, TseditError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

ENDPOINT_ENV = "TSEDIT_EMBED_ENDPOINT"


def _load_run_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    return cfg


def _write_resolved(out_dir, name, resolved):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(resolved, f, indent=2, default=str)
    return path


def _provider_from_args(args, section=None):
    from .textembed import EmbedProviderConfig, make_provider

    section = dict(section or {})
    kind = getattr(args, "provider", None) or section.get("kind", "builtin-hash")
    endpoint = getattr(args, "endpoint", None) or os.environ.get(ENDPOINT_ENV) \
        or section.get("endpoint")
    cfg = EmbedProviderConfig(
        kind=kind,
        width=section.get("width", 768),
        endpoint=endpoint,
        timeout=section.get("timeout", 10.0),
        retries=section.get("retries", 2),
        cache_path=section.get("cache_path"),
        model=section.get("model", ""),
    )
    return make_provider(cfg), cfg


def _parse_weights(spec):
    """Either comma-separated values or start:stop:step (inclusive grid)."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise InputError(f"weight range must be start:stop:step, got {spec!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise InputError("weight step must be > 0")
        count = int(round((stop - start) / step)) + 1
        weights = [round(start + i * step, 10) for i in range(count)]
        return weights
    return [float(w) for w in spec.split(",") if w != ""]


def _parse_attrs(spec):
    out = {}
    for clause in spec.split(","):
        if "=" not in clause:
            raise InputError(f"attribute spec {clause!r} is not name=level")
        name, level = clause.split("=", 1)
        out[name.strip()] = level.strip()
    return out


# -- commands -------------------------------------------------------------------


def cmd_generate_data(args):
    from .datastore import write_dataset
    from .synthgen import SynthConfig, generate_dataset

    run_cfg = _load_run_config(args.config).get("synthgen", {})
    cfg = SynthConfig(
        T=args.T if args.T is not None else run_cfg.get("T", 200),
        samples_per_combination=(args.samples_per_combo if args.samples_per_combo is not None
                                 else run_cfg.get("samples_per_combination", 300)),
        seed=args.seed if args.seed is not None else run_cfg.get("seed", 0),
        families=tuple(args.families.split(",")) if args.families
        else tuple(run_cfg.get("families", ["trend", "seasonality", "shift", "noise"])),
    )
    dataset = generate_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    jsonl = os.path.join(args.out, "dataset.jsonl")
    write_dataset(dataset, jsonl)  # manifest lands at dataset.manifest.json
    _write_resolved(args.out, "resolved-config.json", {
        "command": "generate-data",
        "synthgen": cfg.to_dict(),
        "counts": {"total": len(dataset.series),
                   "train": len(dataset.split("train")),
                   "val": len(dataset.split("val")),
                   "test": len(dataset.split("test"))},
    })
    print(f"wrote {len(dataset.series)} series to {jsonl}")
    return EXIT_OK


def _model_config_from(run_cfg, dataset, args):
    from .model import ModelConfig

    section = dict(run_cfg.get("model", {}))
    if dataset.config is not None:
        section.setdefault("T", dataset.config.T)
    for key in ("k", "d", "decoder_blocks", "attention_heads", "seed"):
        value = getattr(args, f"model_{key}", None)
        if value is not None:
            section[key] = value
    if "kernel_fractions" in section:
        section["kernel_fractions"] = tuple(section["kernel_fractions"])
    if "k" in section and "kernel_fractions" not in section:
        from .model import DEFAULT_KERNEL_FRACTIONS

        k = section["k"]
        if k == len(DEFAULT_KERNEL_FRACTIONS):
            section["kernel_fractions"] = DEFAULT_KERNEL_FRACTIONS
        else:
            # evenly thinned default ladder for smaller k
            ladder = {2: (1.0, 1.0 / 4.0),
                      4: (1.0, 1.0 / 2.0, 1.0 / 4.0, 1.0 / 8.0),
                      6: (1.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 1.0 / 6.0, 1.0 / 8.0)}
            if k not in ladder:
                raise ConfigError(f"no default kernel fractions for k={k}; set them explicitly")
            section["kernel_fractions"] = ladder[k]
    if "conv_channels" in section:
        section["conv_channels"] = tuple(section["conv_channels"])
    return ModelConfig(**section)


def cmd_train(args):
    from .datastore import compute_normalization, read_dataset, read_paraphrases, save_checkpoint
    from .model import Model
    from .synthgen import TemplateSet
    from .training import TrainConfig, train

    run_cfg = _load_run_config(args.config)
    dataset = read_dataset(args.data)
    provider, provider_cfg = _provider_from_args(args, run_cfg.get("provider"))
    model_cfg = _model_config_from(run_cfg, dataset, args)
    section = dict(run_cfg.get("train", {}))
    for key in ("batch_size", "epochs_phase1", "epochs_phase2", "seed", "patience"):
        value = getattr(args, key, None)
        if value is not None:
            section[key] = value
    if args.phase1_only:
        section["epochs_phase2"] = 0
    templates = None
    if args.paraphrases:
        templates = TemplateSet.canonical(dataset.schema)
        templates.load_paraphrases(read_paraphrases(args.paraphrases))
        section["paraphrase_mix"] = True
    train_cfg = TrainConfig(**section)

    stats = compute_normalization(dataset) if args.normalize else None
    model = Model(model_cfg, provider)
    ckpt, log = train(model, dataset, train_cfg, templates=templates, stats=stats)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(ckpt, args.out)
    log_path = args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as f:
        for record in log:
            f.write(json.dumps(record) + "\n")
    _write_resolved(out_dir, os.path.basename(args.out) + ".resolved-config.json", {
        "command": "train",
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
        "provider": provider_cfg.__dict__,
        "normalize": bool(args.normalize),
        "data": os.path.abspath(args.data),
    })
    print(f"checkpoint written to {args.out} (fingerprint {ckpt.fingerprint()}); log at {log_path}")
    return EXIT_OK


def _load_model(args):
    from .datastore import load_checkpoint
    from .model import model_from_checkpoint

    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    provider, _ = _provider_from_args(args)
    if provider.fingerprint != ckpt.provider_fingerprint:
        # rebuild a matching builtin provider when widths differ
        from .textembed import BuiltinHashEmbedder

        if ckpt.provider_fingerprint.startswith("builtin-hash:"):
            width = int(ckpt.provider_fingerprint.split(":")[1])
            provider = BuiltinHashEmbedder(width)
    return ckpt, model_from_checkpoint(ckpt, provider)


def cmd_edit(args):
    from .editing import EditRequest, edit
    from .synthgen import TemplateSet, render_instruction

    ckpt, model = _load_model(args)
    weights = _parse_weights(args.w)
    if args.series_file:
        with open(args.series_file, "r", encoding="utf-8") as f:
            payload = json.load(f)
        values = np.asarray(payload["values"] if isinstance(payload, dict) else payload,
                            dtype=np.float64)
        series_id = payload.get("id", "input") if isinstance(payload, dict) else "input"
    elif args.series_id:
        if not args.data:
            raise ConfigError("--series-id requires --data")
        from .datastore import read_dataset

        dataset = read_dataset(args.data)
        item = dataset.by_id(args.series_id)
        values, series_id = item.values, item.id
    else:
        raise ConfigError("provide --series-file or --series-id")

    if args.instruction:
        instruction = args.instruction
    elif args.target_attrs:
        from .synthgen import AttributeSchema

        if "schema" not in ckpt.extra:
            raise ConfigError("checkpoint carries no schema; use --instruction instead")
        schema = AttributeSchema.from_dict(ckpt.extra["schema"])
        templates = TemplateSet.canonical(schema)
        instruction = render_instruction(_parse_attrs(args.target_attrs), templates)
    else:
        raise ConfigError("provide --instruction or --target-attrs")

    request = EditRequest(series=values, instruction=instruction, weights=weights,
                          normalization="dataset-stats" if ckpt.norm_stats else "none")
    result = edit(model, request, stats=ckpt.norm_stats)
    payload = {
        "seriesId": series_id,
        "instruction": instruction,
        "input": [float(v) for v in values],
        "edits": [{"w": w, "values": [float(v) for v in s], "zNorm": z}
                  for w, s, z in zip(result.weights, result.series, result.z_norms)],
    }
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    _write_resolved(out_dir, os.path.basename(args.out) + ".resolved-config.json", {
        "command": "edit", "checkpoint": os.path.abspath(args.checkpoint),
        "instruction": instruction, "weights": weights,
    })
    if args.svg:
        _write_edit_svg(args.svg, values, result)
    print(f"wrote {len(result.series)} edits to {args.out}")
    return EXIT_OK


def _polyline(values, x0, y0, width, height, vmin, vmax, color, opacity=1.0):
    n = len(values)
    span = (vmax - vmin) or 1.0
    pts = " ".join(
        f"{x0 + width * i / (n - 1):.2f},{y0 + height * (1.0 - (v - vmin) / span):.2f}"
        for i, v in enumerate(values)
    )
    return (f'<polyline fill="none" stroke="{color}" stroke-opacity="{opacity:.3f}" '
            f'stroke-width="1.5" points="{pts}"/>')


def _write_edit_svg(path, input_values, result):
    """Static overlay plot: input in black, edits on a strength color ramp."""
    all_values = np.concatenate([input_values] + [np.asarray(s) for s in result.series])
    vmin, vmax = float(all_values.min()), float(all_values.max())
    width, height, pad = 640, 320, 10
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for w, series in zip(result.weights, result.series):
        hue = int(210 - 180 * w)
        lines.append(_polyline(series, pad, pad, width - 2 * pad, height - 2 * pad,
                               vmin, vmax, f"hsl({hue},80%,45%)", opacity=0.85))
    lines.append(_polyline(input_values, pad, pad, width - 2 * pad, height - 2 * pad,
                           vmin, vmax, "black"))
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines))


def cmd_train_classifiers(args):
    from .datastore import read_dataset, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION
    from .metrics import ClassifierConfig, train_attribute_classifiers

    dataset = read_dataset(args.data)
    items = dataset.split(args.split) if args.split else dataset.series
    if not items:
        raise ConfigError(f"no items in split {args.split!r}")
    run_cfg = _load_run_config(args.config).get("classifier", {})
    cfg = ClassifierConfig(**run_cfg) if run_cfg else ClassifierConfig()
    attributes = args.attributes.split(",") if args.attributes else None
    os.makedirs(args.out, exist_ok=True)
    results = train_attribute_classifiers(items, dataset.schema, cfg, attributes)
    summary = {}
    for attr, (clf, acc) in results.items():
        path = os.path.join(args.out, f"classifier-{attr}.ckpt")
        save_checkpoint(Checkpoint(
            format_version=CHECKPOINT_FORMAT_VERSION,
            config={"role": "classifier", "attribute": attr, "levels": clf.levels,
                    "T": clf.encoder_config.T, "classifier": cfg.__dict__},
            params=clf.export_params(),
            provider_fingerprint="",
            seed=cfg.seed,
            extra={"attribute": attr, "levels": clf.levels},
        ), path)
        summary[attr] = {"path": path, "validation_accuracy": acc}
        print(f"classifier[{attr}] validation accuracy {acc:.3f} -> {path}")
    _write_resolved(args.out, "resolved-config.json",
                    {"command": "train-classifiers", "classifier": cfg.__dict__,
                     "results": summary})
    return EXIT_OK


def load_classifier(path):
    from .datastore import load_checkpoint
    from .metrics import AttributeClassifier, ClassifierConfig

    ckpt = load_checkpoint(path)
    meta = ckpt.config
    cfg_kwargs = dict(meta["classifier"])
    cfg_kwargs["kernel_fractions"] = tuple(cfg_kwargs["kernel_fractions"])
    cfg_kwargs["conv_channels"] = tuple(cfg_kwargs["conv_channels"])
    cfg = ClassifierConfig(**cfg_kwargs)
    clf = AttributeClassifier(meta["attribute"], meta["levels"], meta["T"], cfg)
    clf.load_params(ckpt.params)
    return clf


def cmd_evaluate(args):
    from .datastore import read_dataset
    from .metrics import evaluate, make_single_flip_plan
    from .synthgen import TemplateSet

    ckpt, model = _load_model(args)
    dataset = read_dataset(args.data)
    classifiers = {}
    for attr in dataset.schema.names:
        path = os.path.join(args.classifiers, f"classifier-{attr}.ckpt")
        if not os.path.exists(path):
            raise ConfigError(
                f"missing classifier for {attr!r} at {path}; run `tsedit train-classifiers` first")
        classifiers[attr] = load_classifier(path)
    templates = TemplateSet.canonical(dataset.schema)
    test = dataset.split("test")
    if args.limit:
        test = test[: args.limit]
    rng = np.random.default_rng(args.seed)
    plan = make_single_flip_plan(test, dataset.schema, templates, rng,
                                 attribute=args.attribute)
    report = evaluate(model, plan, args.w, classifiers, dataset.split("test"),
                      stats=ckpt.norm_stats)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "eval-report.json")
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
    csv_path = os.path.join(args.out, "eval-report.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        for row in report.to_csv_rows():
            f.write(",".join(str(c) for c in row) + "\n")
    _write_resolved(args.out, "resolved-config.json", {
        "command": "evaluate", "w": args.w, "seed": args.seed,
        "checkpoint": os.path.abspath(args.checkpoint),
        "classifiers": os.path.abspath(args.classifiers),
        "n_items": report.n_items,
    })
    print(f"evaluation report written to {report_path} and {csv_path}")
    return EXIT_OK


def cmd_tune_fewshot(args):
    from .datastore import load_checkpoint, read_dataset, save_checkpoint
    from .training import FewShotConfig, few_shot_tune

    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    provider, _ = _provider_from_args(args)
    examples = []
    with open(args.examples, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                examples.append((np.asarray(rec["values"], dtype=np.float64),
                                 rec["description"] if "description" in rec else rec["instruction"]))
    if args.max_examples:
        examples = examples[: args.max_examples]
    if args.seen_instructions:
        with open(args.seen_instructions, "r", encoding="utf-8") as f:
            pool = [line.strip() for line in f if line.strip()]
    elif args.data:
        dataset = read_dataset(args.data)
        pool = sorted({s.description for s in dataset.split("train") if s.description})
    else:
        raise ConfigError("provide --seen-instructions or --data for the seen pool")
    cfg = FewShotConfig(
        examples=examples,
        seen_instructions=pool,
        weights=tuple(_parse_weights(args.weights)),
        epochs=args.epochs,
        seed=args.seed,
    )
    tuned = few_shot_tune(ckpt, cfg, provider)
    save_checkpoint(tuned, args.out)
    _write_resolved(os.path.dirname(os.path.abspath(args.out)) or ".",
                    os.path.basename(args.out) + ".resolved-config.json", {
                        "command": "tune-fewshot", "examples": len(examples),
                        "pool_size": len(pool), "weights": list(cfg.weights),
                        "epochs": cfg.epochs, "seed": cfg.seed,
                    })
    print(f"tuned checkpoint written to {args.out} "
          f"(fingerprint {tuned.fingerprint()}, base {ckpt.fingerprint()})")
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    from .service import build_state, create_app

    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    provider, _ = _provider_from_args(args)
    state = build_state(checkpoint_path=args.checkpoint, dataset_path=args.data,
                        provider=provider)
    app = create_app(state, ui_dist=args.ui_dist)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="tsedit",
                                     description="instruction-guided time series editing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate the synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--samples-per-combo", type=int, dest="samples_per_combo")
    p.add_argument("--families", help="comma-separated attribute families")
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train the editor on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--provider", choices=["builtin-hash", "external-http"])
    p.add_argument("--endpoint")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--paraphrases", help="JSONL of {attribute, level, sentence} records; "
                                         "mixes paraphrased instructions into training")
    p.add_argument("--phase1-only", action="store_true", dest="phase1_only")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs1", type=int, dest="epochs_phase1")
    p.add_argument("--epochs2", type=int, dest="epochs_phase2")
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--model-k", type=int, dest="model_k")
    p.add_argument("--model-d", type=int, dest="model_d")
    p.add_argument("--model-decoder-blocks", type=int, dest="model_decoder_blocks")
    p.add_argument("--model-attention-heads", type=int, dest="model_attention_heads")
    p.add_argument("--model-seed", type=int, dest="model_seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="edit a series with an instruction")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--series-file", dest="series_file")
    p.add_argument("--series-id", dest="series_id")
    p.add_argument("--data")
    p.add_argument("--instruction")
    p.add_argument("--target-attrs", dest="target_attrs",
                   help="name=level,... expanded through canonical templates")
    p.add_argument("--w", required=True, help="comma list or start:stop:step")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--provider", choices=["builtin-hash", "external-http"])
    p.add_argument("--endpoint")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("train-classifiers", help="train per-attribute classifiers")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--attributes")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_classifiers)

    p = sub.add_parser("evaluate", help="run the editing-quality evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--classifiers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--w", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attribute")
    p.add_argument("--limit", type=int)
    p.add_argument("--provider", choices=["builtin-hash", "external-http"])
    p.add_argument("--endpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune-fewshot", help="few-shot tune on an unseen condition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--examples", required=True, help="JSONL of {values, description}")
    p.add_argument("--max-examples", type=int, dest="max_examples")
    p.add_argument("--seen-instructions", dest="seen_instructions")
    p.add_argument("--data")
    p.add_argument("--weights", default="0.1:0.9:0.1")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", choices=["builtin-hash", "external-http"])
    p.add_argument("--endpoint")
    p.set_defaults(func=cmd_tune_fewshot)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--ui-dist", dest="ui_dist")
    p.add_argument("--provider", choices=["builtin-hash", "external-http"])
    p.add_argument("--endpoint")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TseditError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
