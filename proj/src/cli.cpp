#include "attrsae/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attrsae/io.hpp"
#include "attrsae/kernels.hpp"
#include "attrsae/steering.hpp"
#include "attrsae/synth.hpp"
#include "attrsae/trainer.hpp"
#include "attrsae/types.hpp"

namespace attrsae {
namespace {

// Shortest round-trip rendering, so repeated runs print identical bytes.
std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrKind::InvalidConfig:
      return 2;
    case ErrKind::NonFiniteLoss:
    case ErrKind::NonFiniteGradient:
      return 4;
    default:
      return 3;  // data / format errors
  }
}

// Multi-row exemplar files aggregate per extract_direction; an empty
// direction is legal but almost always a mistake, so it warns.
AttributeDirection load_direction(const SaeModel& model, const std::string& path,
                                  int64_t k, bool per_row_codes) {
  AttributeDirection dir =
      extract_direction(model, read_embeddings(path), k, path, per_row_codes);
  if (dir.code.empty())
    std::cerr << "warning: " << path << " encodes to an empty direction; it will steer nothing\n";
  return dir;
}

struct GenSynthArgs {
  int64_t d = 0, p = 0, s = 0, n = 0;
  double noise = 0.0, skew = 0.0;
  uint64_t seed = 0;
  std::string out_dir;
};

int cmd_gen_synth(const GenSynthArgs& a) {
  namespace fs = std::filesystem;
  fs::create_directories(a.out_dir);
  const PlantedDictionary dict = gen_dictionary(a.d, a.p, a.skew, a.seed);
  const SynthCorpus corpus = gen_corpus(dict, a.s, a.n, a.noise, 0.5, 2.0, a.seed);
  write_dictionary((fs::path(a.out_dir) / "dictionary.atsd").string(), dict);
  write_embeddings((fs::path(a.out_dir) / "corpus.atse").string(), corpus.batch);
  write_codes((fs::path(a.out_dir) / "truth_codes.atsc").string(), corpus.truth, dict.p);
  std::cout << "dictionary=" << (fs::path(a.out_dir) / "dictionary.atsd").string() << "\n"
            << "corpus=" << (fs::path(a.out_dir) / "corpus.atse").string() << "\n"
            << "truth_codes=" << (fs::path(a.out_dir) / "truth_codes.atsc").string() << "\n"
            << "max_abs_cos=" << fmt(dict.max_abs_cos) << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  int64_t d = 0;  // 0: take from the data file
  int64_t m = 0;  // 0: kDefaultExpansion * d
  TrainConfig cfg;
  bool unmasked_aux = false;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out;
};

int cmd_train(TrainArgs& a) {
  const EmbeddingBatch data = read_embeddings(a.data);
  if (a.d != 0 && a.d != data.d)
    throw Error(ErrKind::DimensionMismatch,
                a.data + " has d=" + std::to_string(data.d) + ", --d says " +
                    std::to_string(a.d));
  const int64_t m = a.m != 0 ? a.m : kDefaultExpansion * data.d;
  a.cfg.masked_aux = !a.unmasked_aux;
  a.cfg.validate(m);

  const TrainReport report =
      train(data, m, a.cfg, [&](const StepRecord& rec, const SaeModel& model) {
        std::cout << "step=" << rec.step << " mse=" << fmt(rec.loss.mse)
                  << " aux=" << fmt(rec.loss.aux) << " total=" << fmt(rec.loss.total)
                  << " dead=" << rec.dead_count << " nnz=" << fmt(rec.mean_nnz) << "\n";
        if (a.checkpoint_every > 0 && (rec.step + 1) % a.checkpoint_every == 0 &&
            rec.step + 1 < a.cfg.total_steps)
          save_checkpoint(a.out + ".step" + std::to_string(rec.step + 1), model, a.cfg);
      });
  save_checkpoint(a.out, report.model, a.cfg);
  std::cout << "checkpoint=" << a.out << "\n";
  return 0;
}

int cmd_encode(const std::string& model_path, const std::string& data_path,
               const std::string& out) {
  const auto [model, cfg] = load_checkpoint(model_path);
  const EmbeddingBatch data = read_embeddings(data_path);
  validate_batch(data, model.d);
  const std::vector<SparseCode> codes = encode_batch(model, data, cfg.k);
  write_codes(out, codes, model.m);
  std::cout << "codes=" << out << "\n";
  return 0;
}

int cmd_decode(const std::string& model_path, const std::string& codes_path,
               const std::string& out) {
  const auto [model, cfg] = load_checkpoint(model_path);
  const std::vector<SparseCode> codes = read_codes(codes_path);
  write_embeddings(out, decode_batch(model, codes));
  std::cout << "embeddings=" << out << "\n";
  return 0;
}

int cmd_steer(const std::string& model_path, const std::string& data_path,
              const std::vector<std::string>& attrs, const std::vector<double>& lambdas,
              bool per_row_codes, const std::string& out) {
  const auto [model, cfg] = load_checkpoint(model_path);
  const EmbeddingBatch data = read_embeddings(data_path);
  validate_batch(data, model.d);

  SteerRequest request;
  for (size_t i = 0; i < attrs.size(); ++i) {
    SteerEntry entry;
    entry.direction = load_direction(model, attrs[i], cfg.k, per_row_codes);
    entry.lambda = lambdas[i];
    request.entries.push_back(std::move(entry));
  }

  EmbeddingBatch steered(data.n, data.d);
  for (int64_t i = 0; i < data.n; ++i) {
    const EmbeddingVector y = manipulate(model, data.row_vec(i), request);
    auto row = steered.row(i);
    for (int64_t j = 0; j < data.d; ++j) row[j] = y[j];
  }
  write_embeddings(out, steered);
  std::cout << "embeddings=" << out << "\n";
  return 0;
}

int cmd_sweep(const std::string& model_path, const std::string& data_path,
              const std::string& attr, const std::vector<double>& lambdas,
              bool per_row_codes, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const auto [model, cfg] = load_checkpoint(model_path);
  const EmbeddingBatch data = read_embeddings(data_path);
  validate_batch(data, model.d);
  const AttributeDirection direction = load_direction(model, attr, cfg.k, per_row_codes);

  fs::create_directories(out_dir);
  for (double lambda : lambdas) {
    SteerRequest request;
    request.entries.push_back({direction, lambda});
    EmbeddingBatch steered(data.n, data.d);
    for (int64_t i = 0; i < data.n; ++i) {
      const EmbeddingVector y = manipulate(model, data.row_vec(i), request);
      auto row = steered.row(i);
      for (int64_t j = 0; j < data.d; ++j) row[j] = y[j];
    }
    const std::string path = (fs::path(out_dir) / ("sweep_" + fmt(lambda) + ".atse")).string();
    write_embeddings(path, steered);
    std::cout << "lambda=" << fmt(lambda) << " file=" << path << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& dict_path,
             const std::string& corpus_path, double threshold) {
  const auto [model, cfg] = load_checkpoint(model_path);
  const PlantedDictionary dict = read_dictionary(dict_path);
  const EmbeddingBatch corpus = read_embeddings(corpus_path);
  if (model.d != dict.d)
    throw Error(ErrKind::DimensionMismatch, "model and dictionary dimensions differ");
  validate_batch(corpus, model.d);

  RecoveryReport report = match_atoms(model, dict, threshold);
  report.dead_fraction = corpus_dead_fraction(model, corpus, cfg.k);
  const double score = disentanglement_score(model, dict, /*probe_count=*/8, cfg.k,
                                             /*seed=*/0);

  std::cout << "threshold=" << fmt(report.threshold) << "\n"
            << "matched_pairs=" << report.matching.size() << "\n"
            << "recovered_count=" << report.recovered_count << "\n"
            << "mean_abs_cosine=" << fmt(report.mean_abs_cosine) << "\n"
            << "dead_fraction=" << fmt(report.dead_fraction) << "\n"
            << "disentanglement_score=" << fmt(score) << "\n";
  for (size_t t = 0; t < report.matching.size(); ++t) {
    const MatchedPair& pair = report.matching[t];
    std::cout << "match_" << t << "=" << pair.atom << ":" << pair.latent << ":"
              << fmt(pair.abs_cosine) << "\n";
  }
  return 0;
}

int cmd_import_npy(const std::string& in, const std::string& out) {
  write_embeddings(out, read_npy(in));
  std::cout << "embeddings=" << out << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"top-k sparse autoencoder toolkit for embedding vectors"};
  app.require_subcommand(1);

  GenSynthArgs gs;
  CLI::App* gen = app.add_subcommand("gen-synth", "generate a planted-dictionary corpus");
  gen->add_option("--d", gs.d, "embedding dimension")->required();
  gen->add_option("--p", gs.p, "number of planted atoms")->required();
  gen->add_option("--s", gs.s, "atoms per sample")->required();
  gen->add_option("--n", gs.n, "number of samples")->required();
  gen->add_option("--noise", gs.noise, "Gaussian noise sigma");
  gen->add_option("--skew", gs.skew, "atom frequency skew exponent");
  gen->add_option("--seed", gs.seed, "RNG seed");
  gen->add_option("--out-dir", gs.out_dir, "output directory")->required();

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "train an autoencoder on embeddings");
  train_cmd->add_option("--data", tr.data, "embedding file")->required();
  train_cmd->add_option("--d", tr.d, "expected embedding dimension (checked against the data)");
  train_cmd->add_option("--m", tr.m, "latent count (default 16*d)");
  train_cmd->add_option("--k", tr.cfg.k, "active latents per code");
  train_cmd->add_option("--k-aux", tr.cfg.k_aux, "dead latents revived per step");
  train_cmd->add_option("--alpha", tr.cfg.alpha, "auxiliary loss weight");
  train_cmd->add_option("--lr", tr.cfg.learning_rate, "Adam learning rate");
  train_cmd->add_option("--batch", tr.cfg.batch_size, "minibatch size");
  train_cmd->add_option("--steps", tr.cfg.total_steps, "optimizer steps");
  train_cmd->add_option("--seed", tr.cfg.seed, "RNG seed");
  train_cmd->add_option("--dead-window", tr.cfg.dead_window,
                        "steps without firing before a latent counts as dead");
  train_cmd->add_flag("--normalize-decoder", tr.cfg.normalize_decoder,
                      "rescale decoder columns to unit norm after each step");
  train_cmd->add_flag("--unmasked-aux", tr.unmasked_aux,
                      "select auxiliary latents from all latents, not just dead ones");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                        "also write <out>.step<N> every N steps");
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();

  std::string enc_model, enc_data, enc_out;
  CLI::App* enc = app.add_subcommand("encode", "encode embeddings into sparse codes");
  enc->add_option("--model", enc_model, "checkpoint")->required();
  enc->add_option("--data", enc_data, "embedding file")->required();
  enc->add_option("--out", enc_out, "codes output path")->required();

  std::string dec_model, dec_codes, dec_out;
  CLI::App* dec = app.add_subcommand("decode", "decode sparse codes into embeddings");
  dec->add_option("--model", dec_model, "checkpoint")->required();
  dec->add_option("--codes", dec_codes, "codes file")->required();
  dec->add_option("--out", dec_out, "embeddings output path")->required();

  std::string st_model, st_data, st_out;
  std::vector<std::string> st_attrs;
  std::vector<double> st_lambdas;
  bool st_per_row = false;
  CLI::App* steer_cmd = app.add_subcommand("steer", "shift embeddings along attribute directions");
  steer_cmd->add_option("--model", st_model, "checkpoint")->required();
  steer_cmd->add_option("--data", st_data, "embeddings to manipulate")->required();
  steer_cmd->add_option("--attr", st_attrs, "attribute exemplar file (repeatable)")->required();
  steer_cmd->add_option("--lambda", st_lambdas, "steering strength, one per --attr")->required();
  steer_cmd->add_flag("--per-row-codes", st_per_row,
                      "encode each exemplar row and average the codes, instead of encoding the mean row");
  steer_cmd->add_option("--out", st_out, "output embeddings path")->required();

  std::string sw_model, sw_data, sw_attr, sw_out_dir;
  std::vector<double> sw_lambdas;
  bool sw_per_row = false;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "steer at several strengths");
  sweep_cmd->add_option("--model", sw_model, "checkpoint")->required();
  sweep_cmd->add_option("--data", sw_data, "embeddings to manipulate")->required();
  sweep_cmd->add_option("--attr", sw_attr, "attribute exemplar file")->required();
  sweep_cmd->add_option("--lambdas", sw_lambdas, "comma-separated strengths")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_flag("--per-row-codes", sw_per_row,
                      "encode each exemplar row and average the codes, instead of encoding the mean row");
  sweep_cmd->add_option("--out-dir", sw_out_dir, "output directory")->required();

  std::string ev_model, ev_dict, ev_corpus;
  double ev_threshold = 0.9;
  CLI::App* eval_cmd = app.add_subcommand("eval", "grade a model against a planted dictionary");
  eval_cmd->add_option("--model", ev_model, "checkpoint")->required();
  eval_cmd->add_option("--dict", ev_dict, "planted dictionary file")->required();
  eval_cmd->add_option("--corpus", ev_corpus, "corpus embedding file")->required();
  eval_cmd->add_option("--threshold", ev_threshold, "recovery cosine threshold");

  std::string np_in, np_out;
  CLI::App* npy = app.add_subcommand("import-npy", "convert a .npy array to the embedding format");
  npy->add_option("--in", np_in, ".npy input path")->required();
  npy->add_option("--out", np_out, "embeddings output path")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(gs);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (enc->parsed()) return cmd_encode(enc_model, enc_data, enc_out);
    if (dec->parsed()) return cmd_decode(dec_model, dec_codes, dec_out);
    if (steer_cmd->parsed()) {
      if (st_attrs.size() != st_lambdas.size()) {
        std::cerr << "steer: got " << st_attrs.size() << " --attr but " << st_lambdas.size()
                  << " --lambda; they must pair up\n";
        return 2;
      }
      return cmd_steer(st_model, st_data, st_attrs, st_lambdas, st_per_row, st_out);
    }
    if (sweep_cmd->parsed())
      return cmd_sweep(sw_model, sw_data, sw_attr, sw_lambdas, sw_per_row, sw_out_dir);
    if (eval_cmd->parsed()) return cmd_eval(ev_model, ev_dict, ev_corpus, ev_threshold);
    if (npy->parsed()) return cmd_import_npy(np_in, np_out);
  } catch (const Error& e) {
    std::cerr << errkind_name(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace attrsae
