"""Command line interface.

Subcommands cover the full pipeline: ``extract`` (captions to
vocabulary and ground-truth attributes), ``vocab-report`` (vocabulary
sizes across IDF thresholds), ``train-attr`` / ``predict-attr`` (the
attribute predictor), ``train-captioner`` / ``caption`` (the decoder),
and ``eval-attr`` / ``eval-captions`` (metrics reports).

Contract: exit code 0 on success, 1 on usage errors, 2 on data or file
format errors, 3 on numeric failures. Errors print exactly one
machine-parsable line ``error: <category>: <reason>`` to stderr. All
randomness derives from ``--seed``, every artifact embeds the producing
command line and seed, and no output contains timestamps, so reruns
with identical inputs and flags are byte-identical.
"""

from __future__ import annotations

import argparse
import shlex
import sys

import numpy as np

from . import attrnet as attrnet_mod
from . import metrics as metrics_mod
from . import scnlstm as scnlstm_mod
from . import semantics, storage
from .corpus import CorpusError, build_documents, parse_caption_file, tokenize
from .nncore import NumericError, ParameterError, Rng

__all__ = ["entrypoint", "main"]


class UsageError(ValueError):
    """Raised for malformed flags or arguments."""


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as exceptions.

    argparse exits with status 2 on its own; this CLI reserves 2 for
    data errors, so usage problems must flow through :class:`UsageError`
    and exit with 1 instead.
    """

    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(
        prog="attrcap",
        description="Distinctive-attribute image captioning pipeline: "
                    "TF-IDF attribute extraction, attribute prediction, "
                    "factorized LSTM decoding, and caption metrics.",
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--seed", type=int, default=0,
                         help="root seed for all randomness (default 0)")
        return sub

    sub = command("extract", "build vocabulary and ground-truth attributes")
    sub.add_argument("--captions", required=True, help="COCO-style caption JSON")
    sub.add_argument("--idf-threshold", type=float, required=True,
                     help="admit words with IDF strictly below this value")
    sub.add_argument("--stem", action=argparse.BooleanOptionalAction,
                     default=True, help="Porter-stem tokens (default on)")
    sub.add_argument("--out-vocab", required=True, help="vocabulary JSON output")
    sub.add_argument("--out-attrs", required=True,
                     help="ground-truth attribute JSONL output")

    sub = command("vocab-report", "vocabulary sizes across IDF thresholds")
    sub.add_argument("--captions", required=True, help="COCO-style caption JSON")
    sub.add_argument("--thresholds", required=True,
                     help="comma-separated IDF thresholds, e.g. 2,2.5,3")
    sub.add_argument("--stem", action=argparse.BooleanOptionalAction,
                     default=True, help="Porter-stem tokens (default on)")
    sub.add_argument("--out", help="optional JSON report output")

    sub = command("train-attr", "train the attribute predictor")
    sub.add_argument("--features", required=True, help="image feature file")
    sub.add_argument("--attrs", required=True, help="target attribute JSONL")
    sub.add_argument("--out-model", required=True, help="checkpoint output")
    sub.add_argument("--hidden", type=int, default=2048)
    sub.add_argument("--dropout", type=float, default=0.3)
    sub.add_argument("--learning-rate", type=float, default=3e-3)
    sub.add_argument("--batch-size", type=int, default=128)
    sub.add_argument("--epochs", type=int, default=100)
    sub.add_argument("--ensemble", type=int, default=5,
                     help="number of members to train (default 5)")
    sub.add_argument("--output-bn", action=argparse.BooleanOptionalAction,
                     default=True,
                     help="batch-normalize the output layer (default on)")

    sub = command("predict-attr", "predict attributes for image features")
    sub.add_argument("--features", required=True, help="image feature file")
    sub.add_argument("--model", required=True, help="attribute checkpoint")
    sub.add_argument("--out-attrs", required=True,
                     help="predicted attribute JSONL output")

    sub = command("train-captioner", "train the caption decoder")
    sub.add_argument("--captions", required=True, help="COCO-style caption JSON")
    sub.add_argument("--features", required=True, help="image feature file")
    sub.add_argument("--attrs", required=True,
                     help="attribute JSONL conditioning the decoder")
    sub.add_argument("--out-model", required=True, help="checkpoint output")
    sub.add_argument("--min-count", type=int, default=5,
                     help="minimum token count for the caption vocabulary")
    sub.add_argument("--embed-dim", type=int, default=300)
    sub.add_argument("--hidden", type=int, default=512)
    sub.add_argument("--factor", type=int, default=512)
    sub.add_argument("--dropout", type=float, default=0.5)
    sub.add_argument("--learning-rate", type=float, default=2e-4)
    sub.add_argument("--batch-size", type=int, default=64)
    sub.add_argument("--epochs", type=int, default=20,
                     help="maximum number of epochs")
    sub.add_argument("--clip-norm", type=float, default=5.0)
    sub.add_argument("--patience", type=int, default=3,
                     help="epochs without validation improvement before stopping")
    sub.add_argument("--val-fraction", type=float, default=0.0,
                     help="fraction of images held out for early stopping "
                          "(0 disables early stopping)")
    sub.add_argument("--ensemble", type=int, default=1)
    sub.add_argument("--init-embeddings",
                     help="optional word2vec-format text file initializing "
                          "the word embeddings")

    sub = command("caption", "decode captions with beam search")
    sub.add_argument("--features", required=True, help="image feature file")
    sub.add_argument("--attrs", required=True,
                     help="attribute JSONL conditioning the decoder")
    sub.add_argument("--model", required=True, help="captioner checkpoint")
    sub.add_argument("--beam", type=int, default=5)
    sub.add_argument("--max-len", type=int, default=20)
    sub.add_argument("--out", required=True, help="caption JSONL output")

    sub = command("eval-attr", "binned F1 of predicted attributes")
    sub.add_argument("--pred", required=True, help="predicted attribute JSONL")
    sub.add_argument("--gt", required=True, help="ground-truth attribute JSONL")
    sub.add_argument("--out", help="optional JSON report output")

    sub = command("eval-captions", "BLEU, ROUGE-L and CIDEr-D of captions")
    sub.add_argument("--candidates", required=True,
                     help="caption JSONL produced by the caption command")
    sub.add_argument("--references", required=True,
                     help="COCO-style caption JSON with reference captions")
    sub.add_argument("--rouge-beta", type=float, default=1.2)
    sub.add_argument("--out", help="optional JSON report output")

    return parser


def _meta(argv, seed):
    command = "attrcap " + " ".join(shlex.quote(str(a)) for a in argv)
    return {"command": command, "seed": int(seed)}


def _parse_thresholds(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad threshold list {text!r}: {exc}") from exc
    if not values:
        raise UsageError("threshold list is empty")
    return values


def _load_documents(path, stem):
    return build_documents(parse_caption_file(path), apply_stemming=stem)


# --------------------------------------------------------------------------
# Subcommand implementations
# --------------------------------------------------------------------------


def _cmd_extract(args, meta):
    documents = _load_documents(args.captions, args.stem)
    vocabulary = semantics.build_vocabulary(
        documents, args.idf_threshold, stemmed=args.stem
    )
    matrix = semantics.ground_truth_matrix(documents, vocabulary)
    storage.save_vocabulary(args.out_vocab, vocabulary, meta=meta)
    storage.write_attributes(
        args.out_attrs, [doc.image_id for doc in documents], matrix, meta=meta
    )
    print(f"vocabulary: {len(vocabulary)} words "
          f"(threshold {args.idf_threshold}, stemmed {args.stem})")
    print(f"documents: {len(documents)}")
    return 0


def _cmd_vocab_report(args, meta):
    thresholds = _parse_thresholds(args.thresholds)
    documents = _load_documents(args.captions, args.stem)
    report = semantics.vocabulary_report(documents, thresholds, stemmed=args.stem)
    report["meta"] = meta
    for threshold in thresholds:
        size = report["sizes"][repr(float(threshold))]
        print(f"threshold {threshold}: {size} words")
    print(f"total distinct words: {report['total_words']}")
    if args.out:
        storage.write_json(args.out, report)
    return 0


def _cmd_train_attr(args, meta):
    if args.ensemble < 1:
        raise UsageError("--ensemble must be at least 1")
    feature_ids, features = storage.read_features(args.features)
    attr_ids, attrs, _ = storage.load_attributes(args.attrs)
    _, x, y = attrnet_mod.join_on_image_id(feature_ids, features, attr_ids, attrs)
    net_config = attrnet_mod.AttrNetConfig(
        n_words=y.shape[1],
        feature_dim=x.shape[1],
        hidden_dim=args.hidden,
        dropout=args.dropout,
        bn_on_output=args.output_bn,
    )
    train_config = attrnet_mod.AttrTrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    if args.ensemble == 1:
        net, losses = attrnet_mod.train_attrnet(x, y, net_config, train_config)
        attrnet_mod.save_attrnet(args.out_model, net, extra_meta=meta)
        if losses:
            print(f"final training mse: {losses[-1]!r}")
    else:
        members = attrnet_mod.train_attrnet_ensemble(
            x, y, net_config, train_config, args.ensemble
        )
        attrnet_mod.save_attrnet_ensemble(args.out_model, members, extra_meta=meta)
    print(f"trained on {x.shape[0]} images")
    return 0


def _cmd_predict_attr(args, meta):
    feature_ids, features = storage.read_features(args.features)
    members = attrnet_mod.load_attrnet_ensemble(args.model)
    predictions = attrnet_mod.predict_ensemble(members, features)
    storage.write_attributes(args.out_attrs, feature_ids, predictions, meta=meta)
    print(f"predicted attributes for {len(feature_ids)} images")
    return 0


def _load_word_embeddings(path, vocab, embed_dim, base):
    """Overlay word2vec-format text vectors onto initialized embeddings."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise storage.FormatError(f"cannot read embeddings {path}: {exc}") from exc
    loaded = 0
    with handle:
        for line_no, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split(" ")
            if line_no == 1 and len(parts) == 2:
                continue  # optional "count dim" header
            if len(parts) != embed_dim + 1:
                raise storage.FormatError(
                    f"{path}:{line_no}: expected a word and {embed_dim} "
                    f"values, got {len(parts)} fields"
                )
            word = parts[0]
            position = vocab.index.get(word)
            if position is not None and position > scnlstm_mod.UNK_ID:
                base[position] = [float(v) for v in parts[1:]]
                loaded += 1
    print(f"initialized {loaded} embedding rows from {path}")
    return base


def _assemble_caption_samples(args):
    pairs = parse_caption_file(args.captions)
    feature_ids, features = storage.read_features(args.features)
    attr_ids, attrs, _ = storage.load_attributes(args.attrs)
    _, x, d = attrnet_mod.join_on_image_id(feature_ids, features, attr_ids, attrs)
    row_of = {image_id: row for row, image_id in enumerate(feature_ids)}
    caption_ids = sorted({image_id for image_id, _ in pairs})
    missing = [image_id for image_id in caption_ids if image_id not in row_of]
    if missing:
        raise attrnet_mod.JoinError(
            f"captions reference images without features/attributes: {missing}"
        )
    token_lists = [tokenize(caption) for _, caption in pairs]
    vocab = scnlstm_mod.CaptionVocab.from_token_lists(
        token_lists, min_count=args.min_count
    )
    samples_by_image = {image_id: [] for image_id in caption_ids}
    for (image_id, _), tokens in zip(pairs, token_lists):
        row = row_of[image_id]
        samples_by_image[image_id].append((x[row], d[row], vocab.encode(tokens)))
    return vocab, caption_ids, samples_by_image, d.shape[1], x.shape[1]


def _cmd_train_captioner(args, meta):
    if args.ensemble < 1:
        raise UsageError("--ensemble must be at least 1")
    if not 0.0 <= args.val_fraction < 1.0:
        raise UsageError("--val-fraction must be in [0, 1)")
    vocab, image_ids, samples_by_image, n_words, feature_dim = (
        _assemble_caption_samples(args)
    )
    net_config = scnlstm_mod.ScnLstmConfig(
        vocab_size=len(vocab),
        n_words=n_words,
        feature_dim=feature_dim,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden,
        factor_dim=args.factor,
        dropout=args.dropout,
    )
    embeddings = None
    if args.init_embeddings:
        base = scnlstm_mod.ScnLstm(
            net_config, seed=Rng(args.seed).split(0).seed
        ).params["embed"]
        embeddings = _load_word_embeddings(
            args.init_embeddings, vocab, args.embed_dim, base
        )

    # Hold out whole images for validation so no image contributes to
    # both sides.
    n_val = int(len(image_ids) * args.val_fraction)
    val_ids = set()
    if n_val > 0:
        order = Rng(args.seed).split(9).permutation(len(image_ids))
        val_ids = {image_ids[j] for j in order[:n_val]}
    train_samples = []
    val_samples = []
    for image_id in image_ids:
        bucket = val_samples if image_id in val_ids else train_samples
        bucket.extend(samples_by_image[image_id])
    if not train_samples:
        raise UsageError("validation split leaves no training captions")

    train_config = scnlstm_mod.CaptionTrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        clip_norm=args.clip_norm,
        patience=args.patience,
        seed=args.seed,
    )
    if args.ensemble == 1:
        model, history = scnlstm_mod.train_captioner(
            train_samples, net_config, train_config,
            val_samples=val_samples or None, embeddings=embeddings,
        )
        scnlstm_mod.save_captioner(args.out_model, model, vocab, extra_meta=meta)
        if history["train_loss"]:
            print(f"final training loss: {history['train_loss'][-1]!r} nats/token")
        if history["val_loss"]:
            print(f"best validation loss: {min(history['val_loss'])!r} nats/token")
    else:
        members = []
        seed_root = Rng(args.seed)
        for member in range(args.ensemble):
            member_config = scnlstm_mod.CaptionTrainConfig(
                learning_rate=args.learning_rate,
                batch_size=args.batch_size,
                max_epochs=args.epochs,
                clip_norm=args.clip_norm,
                patience=args.patience,
                seed=seed_root.split(member + 1).seed,
            )
            model, _ = scnlstm_mod.train_captioner(
                train_samples, net_config, member_config,
                val_samples=val_samples or None, embeddings=embeddings,
            )
            members.append(model)
        scnlstm_mod.save_captioner_ensemble(
            args.out_model, members, vocab, extra_meta=meta
        )
    print(f"trained on {len(train_samples)} captions "
          f"({len(val_samples)} held out), vocabulary {len(vocab)} tokens")
    return 0


def _cmd_caption(args, meta):
    feature_ids, features = storage.read_features(args.features)
    attr_ids, attrs, _ = storage.load_attributes(args.attrs)
    _, x, d = attrnet_mod.join_on_image_id(feature_ids, features, attr_ids, attrs)
    models, vocab = scnlstm_mod.load_captioner_ensemble(args.model)
    records = []
    for row, image_id in enumerate(feature_ids):
        sequence = scnlstm_mod.ensemble_beam_search(
            models, x[row], d[row], beam_width=args.beam, max_len=args.max_len
        )
        words = vocab.decode(sequence.tokens)
        records.append({
            "image_id": int(image_id),
            "caption": " ".join(words),
            "tokens": words,
            "log_prob": sequence.log_prob,
        })
    storage.write_jsonl(args.out, records, meta=meta)
    print(f"decoded {len(records)} captions (beam {args.beam})")
    return 0


def _cmd_eval_attr(args, meta):
    pred_ids, pred, _ = storage.load_attributes(args.pred)
    gt_ids, gt, _ = storage.load_attributes(args.gt)
    _, pred_matrix, gt_matrix = attrnet_mod.join_on_image_id(
        pred_ids, pred, gt_ids, gt
    )
    result = metrics_mod.attribute_f1(pred_matrix, gt_matrix)
    report = {
        "meta": meta,
        "macro_f1": result["macro_f1"],
        "micro_f1": result["micro_f1"],
        "micro_precision": result["micro_precision"],
        "micro_recall": result["micro_recall"],
        "per_bin": {str(k): v for k, v in result["per_bin"].items()},
        "n_scored": result["n_scored"],
        "n_images": len(pred_ids),
    }
    print(f"macro_f1: {result['macro_f1']!r}")
    print(f"micro_f1: {result['micro_f1']!r}")
    if args.out:
        storage.write_json(args.out, report)
    return 0


def _cmd_eval_captions(args, meta):
    records, _ = storage.read_jsonl(args.candidates)
    references_by_image = {}
    for image_id, caption in parse_caption_file(args.references):
        references_by_image.setdefault(image_id, []).append(tokenize(caption))
    candidates = []
    references = []
    for record in records:
        if "image_id" not in record or "tokens" not in record:
            raise storage.FormatError(
                f"{args.candidates}: caption records need image_id and tokens"
            )
        image_id = int(record["image_id"])
        refs = references_by_image.get(image_id)
        if not refs:
            raise storage.FormatError(
                f"no references for image {image_id} in {args.references}"
            )
        candidates.append([str(t) for t in record["tokens"]])
        references.append(refs)
    report = metrics_mod.evaluate_captions(
        candidates, references, rouge_beta=args.rouge_beta
    )
    report["meta"] = meta
    for key in ("bleu_4", "rouge_l", "cider_d"):
        print(f"{key}: {report[key]!r}")
    if args.out:
        storage.write_json(args.out, report)
    return 0


_HANDLERS = {
    "extract": _cmd_extract,
    "vocab-report": _cmd_vocab_report,
    "train-attr": _cmd_train_attr,
    "predict-attr": _cmd_predict_attr,
    "train-captioner": _cmd_train_captioner,
    "caption": _cmd_caption,
    "eval-attr": _cmd_eval_attr,
    "eval-captions": _cmd_eval_captions,
}


def main(argv=None):
    """Run the CLI; returns the process exit code."""
    if argv is None:
        argv = sys.argv[1:]
    argv = [str(a) for a in argv]
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (see --help)")
        handler = _HANDLERS[args.command]
        return handler(args, _meta(argv, args.seed))
    except UsageError as exc:
        _report_error("usage", exc)
        return 1
    except (CorpusError, storage.FormatError, attrnet_mod.JoinError,
            OSError) as exc:
        _report_error("data", exc)
        return 2
    except ParameterError as exc:
        _report_error("usage", exc)
        return 1
    except (NumericError, FloatingPointError) as exc:
        _report_error("numeric", exc)
        return 3
    except ValueError as exc:
        _report_error("data", exc)
        return 2


def _report_error(category, exc):
    reason = " ".join(str(exc).split())
    print(f"error: {category}: {reason}", file=sys.stderr)


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
