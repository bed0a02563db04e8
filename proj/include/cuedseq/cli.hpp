#pragma once

// `cuedseq` command line: one subcommand per stage, file layout under the
// configured corpus / checkpoint / report directories.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cuedseq/pipeline.hpp"

namespace cuedseq::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitIo = 2;

struct Options {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  bool lenient = false;
  bool overwrite = false;
  bool quiet = false;
  bool no_fusion = false;
};

class Runner {
 public:
  Runner(RunConfig cfg, Options opt, std::ostream& out, std::ostream& log)
      : cfg_(std::move(cfg)), opt_(std::move(opt)), out_(out), log_(log) {}

  void generate() {
    const std::string manifest = (fs::path(cfg_.paths.corpus) / "manifest.json").string();
    claim(manifest);
    if (opt_.overwrite) clear_corpus_dir();
    progress("generating corpus");
    Corpus c = generate_corpus(cfg_.corpus_config(), cfg_.seed);
    write_corpus(c, cfg_.paths.corpus);
    nlohmann::json summary = {{"sentences", c.sentences.size()}, {"static_images", c.static_set.size()}};
    write_report("generate", summary);
    out_ << "corpus: " << c.sentences.size() << " sentences, " << c.static_set.size() << " static images -> "
         << cfg_.paths.corpus << "\n";
  }

  void pretrain_stage() {
    const auto ckpt = checkpoint("pretrain");
    claim(ckpt);
    Corpus c = corpus();
    auto res = run_pretrain(cfg_, c, split(c), cfg_.seed, epoch_logger("pretrain", "loss"));
    save_checkpoint(res.params, ckpt);
    write_history_csv(report_file("pretrain_history.csv"), "mean_loss", res.loss_history);
    write_report("pretrain", {{"final_loss", last(res.loss_history)}, {"epochs", res.loss_history.size()}});
    out_ << "pretrain: final NT-Xent " << format_double(last(res.loss_history)) << " -> " << ckpt << "\n";
  }

  void finetune_stage() {
    const auto ckpt = checkpoint("finetune");
    claim(ckpt);
    Corpus c = corpus();
    auto res = run_finetune(cfg_, c, split(c), load_checkpoint(checkpoint("pretrain")), cfg_.seed,
                            epoch_logger("finetune", "subset acc"));
    save_checkpoint(res.params, ckpt);
    write_history_csv(report_file("finetune_history.csv"), "subset_accuracy", res.accuracy_history);
    write_report("finetune", {{"final_subset_accuracy", last(res.accuracy_history)}});
    out_ << "finetune: subset accuracy " << format_double(last(res.accuracy_history)) << " -> " << ckpt << "\n";
  }

  void train_seq() {
    const auto ckpt = checkpoint("sequence");
    claim(ckpt);
    Corpus c = corpus();
    auto res = run_train_sequence(cfg_, c, split(c), load_checkpoint(checkpoint("finetune")), cfg_.seed,
                                  epoch_logger("train-seq", "held-out Te"));
    save_checkpoint(res.params, ckpt);
    write_sequence_history_csv(report_file("sequence_history.csv"), res.history);
    write_report("train-seq", {{"final_heldout_Te", res.history.empty() ? 0.0 : res.history.back().heldout_te}});
    out_ << "train-seq: held-out Te "
         << (res.history.empty() ? std::string("n/a") : format_double(res.history.back().heldout_te)) << " -> "
         << ckpt << "\n";
  }

  void train_fusion_stage() {
    const auto ckpt = checkpoint("fusion");
    claim(ckpt);
    Corpus c = corpus();
    auto res = run_train_fusion(cfg_, c, split(c), load_checkpoint(checkpoint("finetune")), cfg_.seed,
                                epoch_logger("train-fusion", "held-out Te"));
    save_checkpoint(res.params, ckpt);
    write_sequence_history_csv(report_file("fusion_history.csv"), res.history);
    write_report("train-fusion", {{"final_heldout_Te", res.history.empty() ? 0.0 : res.history.back().heldout_te}});
    out_ << "train-fusion: held-out Te "
         << (res.history.empty() ? std::string("n/a") : format_double(res.history.back().heldout_te)) << " -> "
         << ckpt << "\n";
  }

  /// Scores whatever trained stages exist; the fine-tuned encoder is required.
  void eval() {
    const auto out_json = report_file("eval.json");
    claim(out_json);
    Corpus c = corpus();
    const auto test = split(c).test;
    const ParamSet fine = load_checkpoint(checkpoint("finetune"));
    nlohmann::json reports = nlohmann::json::object();
    auto stat = eval_static(cfg_, c, test, fine);
    reports["handshape_static"] = stat.to_json();
    out_ << "hand-shape accuracy (static, held-out): " << format_double(*stat.accuracy) << "\n";
    if (fs::exists(checkpoint("sequence"))) {
      auto seq = eval_shape_sequences(cfg_, c, test, fine, load_checkpoint(checkpoint("sequence")));
      reports["handshape_sequence"] = seq.to_json();
      write_text(report_file("eval_handshape_sequence.csv"), seq.to_csv());
      out_ << "hand-shape sequences: Te " << format_double(seq.micro.te) << " Tc " << format_double(seq.micro.tc)
           << "\n";
    }
    if (fs::exists(checkpoint("fusion"))) {
      auto ph = eval_phonemes(cfg_, c, test, load_checkpoint(checkpoint("fusion")));
      reports["phoneme"] = ph.to_json();
      write_text(report_file("eval_phoneme.csv"), ph.to_csv());
      out_ << "phonemes: Te " << format_double(ph.micro.te) << " Tc " << format_double(ph.micro.tc) << "\n";
    }
    write_report("eval", {{"reports", reports}});
  }

  void xval() {
    const auto out_json = report_file("xval.json");
    claim(out_json);
    Corpus c = corpus();
    std::vector<double> acc, te, tc, pte, ptc;
    nlohmann::json folds = nlohmann::json::array();
    std::vector<std::vector<std::string>> rows;
    auto results = cross_validate(cfg_, c, !opt_.no_fusion, [&](std::size_t f, const FoldResult& r) {
      progress("fold " + std::to_string(f + 1) + "/" + std::to_string(cfg_.xval_folds) + ": hand-shape Te " +
               format_double(r.shape.te));
    });
    for (std::size_t f = 0; f < results.size(); ++f) {
      const auto& r = results[f];
      acc.push_back(r.static_accuracy);
      te.push_back(r.shape.te);
      tc.push_back(r.shape.tc);
      nlohmann::json j = {{"fold", f + 1},
                          {"test_sentences", r.test_sentences},
                          {"static_accuracy", r.static_accuracy},
                          {"handshape_Te", r.shape.te},
                          {"handshape_Tc", r.shape.tc}};
      std::vector<std::string> row{std::to_string(f + 1), format_double(r.static_accuracy), format_double(r.shape.te),
                                   format_double(r.shape.tc)};
      if (r.phoneme) {
        pte.push_back(r.phoneme->te);
        ptc.push_back(r.phoneme->tc);
        j["phoneme_Te"] = r.phoneme->te;
        j["phoneme_Tc"] = r.phoneme->tc;
        row.push_back(format_double(r.phoneme->te));
        row.push_back(format_double(r.phoneme->tc));
      }
      folds.push_back(j);
      rows.push_back(row);
    }
    auto ms = [](const std::vector<double>& v) {
      auto m = mean_std(v);
      return nlohmann::json{{"mean", m.mean}, {"stddev", m.stddev}};
    };
    nlohmann::json summary = {{"folds", folds},
                              {"static_accuracy", ms(acc)},
                              {"handshape_Te", ms(te)},
                              {"handshape_Tc", ms(tc)}};
    if (!pte.empty()) {
      summary["phoneme_Te"] = ms(pte);
      summary["phoneme_Tc"] = ms(ptc);
    }
    write_csv(report_file("xval.csv"),
              pte.empty() ? "fold,static_accuracy,handshape_Te,handshape_Tc"
                          : "fold,static_accuracy,handshape_Te,handshape_Tc,phoneme_Te,phoneme_Tc",
              rows);
    write_report("xval", summary);
    auto line = [&](const char* name, const std::vector<double>& v) {
      auto m = mean_std(v);
      out_ << name << ": " << format_double(m.mean) << " +- " << format_double(m.stddev) << "\n";
    };
    line("hand-shape Te", te);
    line("hand-shape Tc", tc);
    if (!pte.empty()) {
      line("phoneme Te", pte);
      line("phoneme Tc", ptc);
    }
  }

 private:
  std::string checkpoint(const std::string& stage) const {
    return (fs::path(cfg_.paths.checkpoints) / (stage + ".csw")).string();
  }
  std::string report_file(const std::string& name) const { return (fs::path(cfg_.paths.reports) / name).string(); }

  // refuses to replace an existing output unless --overwrite
  void claim(const std::string& path) const {
    if (fs::exists(path) && !opt_.overwrite)
      throw ConfigError("", path + " already exists (pass --overwrite to replace it)");
    for (const auto& dir : {fs::path(path).parent_path(), fs::path(cfg_.paths.reports)}) {
      if (dir.empty()) continue;
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoError(dir.string(), "cannot create directory: " + ec.message());
    }
  }

  void clear_corpus_dir() const {
    std::error_code ec;
    if (!fs::is_directory(cfg_.paths.corpus, ec)) return;
    for (const auto& e : fs::directory_iterator(cfg_.paths.corpus))
      if (e.path().extension() == ".csc" || e.path().filename() == "manifest.json") fs::remove(e.path());
  }

  Corpus corpus() const {
    Corpus c = read_corpus(cfg_.paths.corpus);
    check_corpus_language(cfg_, c);
    return c;
  }
  SentenceSplit split(const Corpus& c) const { return split_sentences(c, cfg_.seed); }

  static double last(const std::vector<double>& v) { return v.empty() ? 0.0 : v.back(); }

  EpochCallback epoch_logger(std::string stage, std::string what) {
    if (opt_.quiet) return {};
    return [this, stage, what](std::size_t epoch, double v) {
      log_ << stage << " epoch " << epoch << ": " << what << " " << format_double(v) << "\n";
    };
  }
  void progress(const std::string& msg) {
    if (!opt_.quiet) log_ << msg << "\n";
  }

  void write_report(const std::string& stage, const nlohmann::json& summary) {
    nlohmann::json j = {{"stage", stage}, {"seed", cfg_.seed}, {"config", to_json(cfg_)}};
    for (const auto& [k, v] : summary.items()) j[k] = v;
    write_text(report_file(stage + ".json"), j.dump(2) + "\n");
  }

  static void write_text(const std::string& path, const std::string& text) { detail::write_file_bytes(path, text); }

  RunConfig cfg_;
  Options opt_;
  std::ostream& out_;
  std::ostream& log_;
};

/// Parses argv (without the program name) and runs one subcommand. Returns
/// 0 on success, 1 on usage or validation errors, 2 on file errors.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cued-speech recognition pipeline on a synthetic corpus", "cuedseq"};
  app.require_subcommand(1);
  Options opt;
  struct Command {
    const char* name;
    const char* help;
    void (Runner::*fn)();
  };
  const std::vector<Command> commands{
      {"generate", "render the synthetic corpus", &Runner::generate},
      {"pretrain", "contrastive pretraining on unlabeled static hand images", &Runner::pretrain_stage},
      {"finetune", "hand-shape classifier on the clean-labeled subset", &Runner::finetune_stage},
      {"train-seq", "hand-shape sequence model (CTC)", &Runner::train_seq},
      {"train-fusion", "three-stream phoneme recognizer (CTC)", &Runner::train_fusion_stage},
      {"eval", "score the trained stages on the held-out sentences", &Runner::eval},
      {"xval", "k-fold protocol over sentences, every stage retrained per fold", &Runner::xval},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config,-c", opt.config_path, "JSON run configuration");
    sub->add_option("--set", opt.overrides, "override one field, e.g. --set finetune.epochs=5")->allow_extra_args(false);
    sub->add_flag("--lenient", opt.lenient, "ignore unknown config fields");
    sub->add_flag("--overwrite", opt.overwrite, "replace existing outputs");
    sub->add_flag("--quiet,-q", opt.quiet, "no per-epoch progress");
    if (std::string(c.name) == "xval") sub->add_flag("--no-fusion", opt.no_fusion, "skip the phoneme recognizer");
    subs.push_back(sub);
  }

  if (!args.empty() && !args[0].starts_with("-")) {
    bool known = false;
    for (const auto& c : commands) known = known || args[0] == c.name;
    if (!known) {
      err << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
      return kExitInvalid;
    }
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitInvalid;
  }

  try {
    RunConfig cfg = resolve_config(opt.config_path, opt.overrides, !opt.lenient);
    Runner runner(cfg, opt, out, err);
    for (std::size_t i = 0; i < commands.size(); ++i)
      if (subs[i]->parsed()) (runner.*commands[i].fn)();
    return kExitOk;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

}  // namespace cuedseq::cli
