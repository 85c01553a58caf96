#include "a2t/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "a2t/decoder.hpp"
#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"
#include "a2t/metrics.hpp"
#include "a2t/rollout.hpp"
#include "a2t/toy.hpp"
#include "a2t/wire.hpp"

namespace a2t::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string quoted(const std::string& s) { return json(s).dump(); }

/// Local or remote implementations of the three backend roles.
struct Backends {
  std::unique_ptr<wire::RpcClient> client;
  std::unique_ptr<LanguageModelBackend> owned_lm;
  std::unique_ptr<MatcherBackend> matcher;
  std::unique_ptr<VqaBackend> vqa;
  const LanguageModelBackend* lm = nullptr;
};

Backends make_backends(const std::string& kind, const std::string& address, int patch_px = 16) {
  Backends b;
  if (kind == "toy") {
    b.lm = &toy::ToyLanguageModel::shipped();
    b.matcher = std::make_unique<toy::ToyMatcher>(toy::Palette::shipped(), patch_px);
    b.vqa = std::make_unique<toy::ToyVqa>(toy::Palette::shipped(), patch_px);
  } else {
    b.client = std::make_unique<wire::RpcClient>(wire::connect(address.empty() ? wire::default_address() : address));
    b.owned_lm = std::make_unique<wire::WireLanguageModel>(*b.client);
    b.lm = b.owned_lm.get();
    b.matcher = std::make_unique<wire::WireMatcher>(*b.client);
    b.vqa = std::make_unique<wire::WireVqa>(*b.client);
  }
  return b;
}

struct ImageSource {
  std::string scene;
  std::string image;

  void add(CLI::App& app) {
    auto* s = app.add_option("--scene", scene, "toy scene file (JSON grid of concept words)");
    auto* i = app.add_option("--image", image, "PNG or binary PPM image");
    s->excludes(i);
    i->excludes(s);
  }
  Image load() const {
    if (!scene.empty()) return toy::ToyScene::load(scene).render();
    if (!image.empty()) return load_image(image);
    throw InvalidInput("one of --scene or --image is required");
  }
  // Toy backends must decode with the scene's patch size.
  int patch_px() const { return scene.empty() ? 16 : toy::ToyScene::load(scene).patch_px; }
};

void add_guiding(CLI::App& app, GuidingConfig& cfg) {
  app.add_option("--tau", cfg.tau, "saliency threshold")->capture_default_str();
  app.add_option("--kappa", cfg.kappa, "guiding temperature")->capture_default_str();
  app.add_option("--beta", cfg.beta, "weight of the matching quality")->capture_default_str();
  app.add_option("--k", cfg.k, "candidates per step")->capture_default_str();
  app.add_option("--p", cfg.top_p, "nucleus mass for continuations")->capture_default_str();
  app.add_option("--max-tokens", cfg.max_tokens, "generation limit")->capture_default_str();
  app.add_option("--max-continuation-tokens", cfg.max_continuation_tokens)->capture_default_str();
  app.add_option("--seed", cfg.seed, "sampling seed")->capture_default_str();
  app.add_option("--workers", cfg.workers, "concurrent completions per step")->capture_default_str();
  app.add_flag("--renormalize-topk", cfg.renormalize_topk, "rescale LM probabilities over the k candidates");
}

struct PromptFlags {
  std::string template_id;
  std::string templates_file;
  int n_shot = 0;
  std::string examples_file;

  void add(CLI::App& app) {
    app.add_option("--template", template_id, "prompt template id");
    app.add_option("--templates-file", templates_file, "extra templates, one 'id<TAB>pattern' per line");
    app.add_option("--n-shot", n_shot, "number of in-context examples")->check(CLI::NonNegativeNumber);
    app.add_option("--examples-file", examples_file, "in-context examples (JSON lines)");
  }

  PromptSpec build() const {
    PromptSpec spec;
    if (!template_id.empty()) {
      std::vector<PromptTemplate> all = builtin_templates();
      if (!templates_file.empty())
        for (PromptTemplate& t : load_templates(templates_file)) all.push_back(std::move(t));
      spec.tmpl = find_template(all, template_id);
    } else if (!templates_file.empty()) {
      throw InvalidInput("--templates-file needs --template to pick one");
    }
    if (n_shot > 0) {
      if (examples_file.empty()) throw InvalidInput("--n-shot needs --examples-file");
      std::vector<InContextExample> ex = load_examples(examples_file);
      if (static_cast<int>(ex.size()) < n_shot)
        throw InvalidInput("--n-shot " + std::to_string(n_shot) + " but the examples file has " +
                           std::to_string(ex.size()));
      ex.resize(n_shot);
      spec.shots = std::move(ex);
    }
    return spec;
  }
};

std::string out_path(const std::string& dir, const char* name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

std::string transcript(const TranslationResult& r) {
  std::ostringstream t;
  t << "prompt: " << r.prompt << "\n";
  t << "answer: " << r.answer << (r.answer_from_ground_truth ? " (ground truth)" : " (vqa)") << "\n";
  t << "mask coverage: " << fmt("%.6f", r.mask_coverage) << "\n";
  auto print_step = [&](const std::string& label, const DecodeStep& s) {
    t << label << ": chose " << quoted(s.candidates[s.chosen].token.surface) << "\n";
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
      const Candidate& c = s.candidates[i];
      t << (static_cast<int>(i) == s.chosen ? "  * [" : "    [") << i << "] " << quoted(c.token.surface)
        << " lm=" << fmt("%.6f", c.lm_prob) << " cos=" << fmt("%.6f", c.cosine)
        << " f=" << fmt("%.6f", c.match_score) << " score=" << fmt("%.6f", c.combined) << " | " << c.sentence
        << (c.truncated ? " [truncated]" : "") << "\n";
    }
  };
  for (std::size_t i = 0; i < r.steps.size(); ++i) print_step("step " + std::to_string(i), r.steps[i]);
  if (r.eos_step) print_step("end", *r.eos_step);
  t << "text: " << r.text << "\n";
  t << "stop: " << to_string(r.stop_reason) << "\n";
  return t.str();
}

// ---- sweep ----

struct SweepItem {
  Image image;
  std::string question;
  std::optional<std::string> answer;
  std::vector<std::string> references;
  int patch_px = 16;
};

std::vector<SweepItem> load_sweep_items(const std::string& path) {
  const fs::path base = fs::path(path).parent_path();
  std::vector<SweepItem> items;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidInput(where + e.what());
    }
    SweepItem item;
    try {
      if (doc.contains("scene")) {
        const fs::path p = doc["scene"].get<std::string>();
        const toy::ToyScene sc = toy::ToyScene::load((p.is_absolute() ? p : base / p).string());
        item.image = sc.render();
        item.patch_px = sc.patch_px;
      } else if (doc.contains("grid")) {
        const toy::ToyScene sc = toy::ToyScene::from_json(doc);
        item.image = sc.render();
        item.patch_px = sc.patch_px;
      } else {
        throw InvalidInput("item needs 'scene' or 'grid'");
      }
      item.question = doc.at("question").get<std::string>();
      if (doc.contains("answer")) item.answer = doc["answer"].get<std::string>();
      item.references = doc.at("references").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw InvalidInput(where + e.what());
    } catch (const Error& e) {
      throw InvalidInput(where + e.what());
    }
    if (item.references.empty()) throw InvalidInput(where + "references must be non-empty");
    items.push_back(std::move(item));
  }
  if (items.empty()) throw InvalidInput(path + ": no sweep items");
  return items;
}

void set_param(GuidingConfig& cfg, const std::string& param, double v) {
  if (param == "tau") cfg.tau = v;
  else if (param == "kappa") cfg.kappa = v;
  else if (param == "beta") cfg.beta = v;
  else if (param == "p") cfg.top_p = v;
  else if (param == "k") {
    if (v != static_cast<double>(static_cast<int>(v))) throw InvalidInput("k grid values must be integers");
    cfg.k = static_cast<int>(v);
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InvalidInput("bad grid value '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidInput("grid must be non-empty");
  return out;
}

// ---- error reporting ----

// Walks a nested exception chain: prints every level, returns the exit code of the innermost known type.
int report(const std::exception& e, std::ostream& err, int depth = 0) {
  err << (depth == 0 ? "a2t: " : "  caused by: ") << e.what() << "\n";
  int code = kFailure;
  if (dynamic_cast<const wire::ConnectionError*>(&e) || dynamic_cast<const wire::TimeoutError*>(&e))
    code = kBackendUnreachable;
  else if (dynamic_cast<const ImageError*>(&e))
    code = kBadImage;
  else if (dynamic_cast<const InvalidInput*>(&e) || dynamic_cast<const InvalidTemplate*>(&e))
    code = kUsage;
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    return report(inner, err, depth + 1);
  } catch (...) {
  }
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Translate VQA attention into natural-language explanations", "a2t"};
  app.require_subcommand(1);

  // translate
  GuidingConfig tcfg;
  ImageSource t_src;
  PromptFlags t_prompt;
  std::string t_backend = "toy", t_addr, t_question, t_out = ".";
  std::optional<std::string> t_answer;
  auto* translate_cmd = app.add_subcommand("translate", "explain a VQA answer for an image");
  translate_cmd->add_option("--backend", t_backend)->check(CLI::IsMember({"toy", "wire"}))->capture_default_str();
  translate_cmd->add_option("--addr", t_addr, "wire backend address (host:port or exec:<cmd>)");
  t_src.add(*translate_cmd);
  translate_cmd->add_option("--question", t_question)->required();
  translate_cmd->add_option("--answer", t_answer, "ground-truth answer to condition on");
  add_guiding(*translate_cmd, tcfg);
  t_prompt.add(*translate_cmd);
  translate_cmd->add_option("--out-dir", t_out)->capture_default_str();

  // rollout
  double r_tau = GuidingConfig{}.tau;
  std::string r_dump, r_out = ".";
  ImageSource r_src;
  auto* rollout_cmd = app.add_subcommand("rollout", "saliency, mask and masked image from an attention dump");
  rollout_cmd->add_option("--dump", r_dump)->required();
  r_src.add(*rollout_cmd);
  rollout_cmd->add_option("--tau", r_tau)->capture_default_str();
  rollout_cmd->add_option("--out-dir", r_out)->capture_default_str();

  // infer
  std::string i_backend = "toy", i_addr, i_question, i_out = ".";
  ImageSource i_src;
  auto* infer = app.add_subcommand("infer", "run the VQA model and save its attention dump");
  infer->add_option("--backend", i_backend)->check(CLI::IsMember({"toy", "wire"}))->capture_default_str();
  infer->add_option("--addr", i_addr);
  i_src.add(*infer);
  infer->add_option("--question", i_question)->required();
  infer->add_option("--out-dir", i_out)->capture_default_str();

  // evaluate
  std::string e_dataset, e_out = ".";
  std::vector<std::string> e_modes{"all"};
  auto* evaluate = app.add_subcommand("evaluate", "score hypotheses against references");
  evaluate->add_option("--dataset", e_dataset)->required();
  evaluate->add_option("--mode", e_modes, "all, gt_conditioned, answer_correct (repeatable)")
      ->delimiter(',')
      ->capture_default_str();
  evaluate->add_option("--out-dir", e_out)->capture_default_str();

  // sweep
  GuidingConfig scfg;
  PromptFlags s_prompt;
  std::string s_param, s_grid, s_dataset, s_out = ".";
  auto* sweep = app.add_subcommand("sweep", "evaluate the toy pipeline over a grid of one hyperparameter");
  sweep->add_option("--param", s_param)->required()->check(CLI::IsMember({"tau", "kappa", "beta", "k", "p"}));
  sweep->add_option("--grid", s_grid, "comma-separated values")->required();
  sweep->add_option("--dataset", s_dataset, "JSON lines of {scene|grid, question, references, answer?}")->required();
  add_guiding(*sweep, scfg);
  s_prompt.add(*sweep);
  sweep->add_option("--out-dir", s_out)->capture_default_str();

  // serve
  std::string v_addr = wire::kDefaultAddress;
  bool v_stdio = false;
  auto* serve_cmd = app.add_subcommand("serve", "serve the toy backends over the wire protocol");
  serve_cmd->add_option("--addr", v_addr, "host:port to listen on")->capture_default_str();
  serve_cmd->add_flag("--stdio", v_stdio, "serve one session on stdin/stdout instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*translate_cmd) {
      tcfg.validate();
      const PromptSpec prompt = t_prompt.build();
      const Image img = t_src.load();
      Backends b = make_backends(t_backend, t_addr, t_src.patch_px());
      const TranslationResult r = a2t::translate(img, t_question, *b.lm, *b.matcher, *b.vqa, tcfg, prompt, t_answer);
      json doc = to_json(r);
      doc["question"] = t_question;
      doc["config"] = {{"tau", tcfg.tau},   {"kappa", tcfg.kappa}, {"beta", tcfg.beta},
                       {"k", tcfg.k},       {"p", tcfg.top_p},     {"max_tokens", tcfg.max_tokens},
                       {"seed", tcfg.seed}, {"template", prompt.tmpl.id}};
      write_file_atomic(out_path(t_out, "result.json"), doc.dump(2) + "\n");
      write_file_atomic(out_path(t_out, "transcript.txt"), transcript(r));
      out << r.text << "\n";
    } else if (*rollout_cmd) {
      if (!(r_tau >= 0.0 && r_tau <= 1.0)) throw InvalidInput("--tau must lie in [0, 1]");
      const AttentionStack stack = load_attention_dump(r_dump);
      const Image img = r_src.load();
      if (img.width < stack.patch_grid.cols || img.height < stack.patch_grid.rows)
        throw ImageError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " is smaller than the " + std::to_string(stack.patch_grid.rows) + "x" +
                         std::to_string(stack.patch_grid.cols) + " patch grid of the dump");
      const SaliencyMap s = saliency(rollout(stack), stack);
      const BinaryMask m = threshold_mask(s, r_tau, img.width, img.height);
      write_file_atomic(out_path(r_out, "saliency.pgm"), encode_saliency_pgm(s, img.width, img.height));
      write_file_atomic(out_path(r_out, "mask.pgm"), encode_mask_pgm(m));
      write_file_atomic(out_path(r_out, "masked.ppm"), encode_ppm(apply_mask(img, m)));
      out << "kept " << m.popcount() << " of " << m.bits.size() << " pixels (" << fmt("%.4f", m.coverage())
          << ")\n";
    } else if (*infer) {
      const Image img = i_src.load();
      Backends b = make_backends(i_backend, i_addr, i_src.patch_px());
      const VqaOutput v = b.vqa->infer(img, i_question);
      validate(v.stack);
      write_file_atomic(out_path(i_out, "attention.json"), to_json(v.stack).dump() + "\n");
      out << v.answer << "\n";
    } else if (*evaluate) {
      std::vector<metrics::EvalMode> modes;
      for (const std::string& m : e_modes) modes.push_back(metrics::eval_mode_from_string(m));
      const std::vector<metrics::EvalRecord> records = metrics::load_records(e_dataset);
      std::vector<metrics::MetricRow> rows;
      for (metrics::EvalMode m : modes) rows.push_back(metrics::evaluate(records, m));
      for (const metrics::MetricRow& row : rows)
        if (row.scores && row.scores->cider_degenerate)
          err << "a2t: warning: CIDEr-D idf is degenerate for mode " << metrics::to_string(row.mode)
              << " (fewer than two records)\n";
      write_file_atomic(out_path(e_out, "metrics.tsv"), metrics::table_tsv(rows));
      out << metrics::table_pretty(rows);
    } else if (*sweep) {
      scfg.validate();
      const std::vector<double> grid = parse_grid(s_grid);
      const PromptSpec prompt = s_prompt.build();
      const std::vector<SweepItem> items = load_sweep_items(s_dataset);
      std::ostringstream tsv, hyps;
      tsv << "param\tvalue\tn\tB1\tB2\tB3\tB4\tRL\tC\tmean\tcoverage\n";
      for (double v : grid) {
        GuidingConfig cfg = scfg;
        set_param(cfg, s_param, v);
        cfg.validate();
        std::vector<metrics::EvalRecord> records;
        double coverage = 0.0;
        for (std::size_t i = 0; i < items.size(); ++i) {
          const SweepItem& it = items[i];
          Backends b = make_backends("toy", "", it.patch_px);
          const TranslationResult r =
              a2t::translate(it.image, it.question, *b.lm, *b.matcher, *b.vqa, cfg, prompt, it.answer);
          coverage += r.mask_coverage;
          metrics::EvalRecord rec;
          rec.question = it.question;
          rec.ground_truth_answer = it.answer.value_or(r.answer);
          rec.predicted_answer = r.answer;
          rec.references = it.references;
          rec.hypothesis = r.text;
          rec.gt_conditioned = it.answer.has_value();
          records.push_back(std::move(rec));
          hyps << json{{"param", s_param}, {"value", v}, {"index", i}, {"hypothesis", r.text}}.dump() << "\n";
        }
        const metrics::MetricRow row = metrics::evaluate(records, metrics::EvalMode::all);
        const metrics::Scores& sc = *row.scores;
        const double mean =
            (sc.bleu[0] + sc.bleu[1] + sc.bleu[2] + sc.bleu[3] + sc.rouge_l + sc.cider_d) / 6.0;
        tsv << s_param << "\t" << fmt("%.10g", v) << "\t" << row.selected;
        for (double x : {sc.bleu[0], sc.bleu[1], sc.bleu[2], sc.bleu[3], sc.rouge_l, sc.cider_d, mean})
          tsv << "\t" << fmt("%.6f", x);
        tsv << "\t" << fmt("%.6f", coverage / static_cast<double>(items.size())) << "\n";
      }
      write_file_atomic(out_path(s_out, "sweep.tsv"), tsv.str());
      write_file_atomic(out_path(s_out, "sweep_hypotheses.jsonl"), hyps.str());
      out << tsv.str();
    } else if (*serve_cmd) {
      Backends b = make_backends("toy", "");
      wire::BackendServer backend(*b.lm, *b.matcher, *b.vqa);
      if (v_stdio) {
        wire::FdTransport io(0, 1);
        wire::serve(io, backend.handler());
      } else {
        const auto colon = v_addr.rfind(':');
        if (colon == std::string::npos) throw InvalidInput("--addr must be host:port");
        int port = 0;
        try {
          port = std::stoi(v_addr.substr(colon + 1));
        } catch (const std::logic_error&) {
          throw InvalidInput("--addr must be host:port");
        }
        wire::TcpServer server(v_addr.substr(0, colon), port, backend.handler());
        err << "a2t: serving toy backends on " << v_addr.substr(0, colon) << ":" << server.port() << "\n";
        server.run();
      }
    }
  } catch (const std::exception& e) {
    return report(e, err);
  }
  return kOk;
}

}  // namespace a2t::cli
