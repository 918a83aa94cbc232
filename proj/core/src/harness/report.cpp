#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "vlattack/harness/evaluate.hpp"

namespace vlattack::harness {

namespace {

using nlohmann::json;

blackbox::Stage stage_from_string(const std::string& name) {
  for (auto s : {blackbox::Stage::kImage, blackbox::Stage::kText, blackbox::Stage::kMultimodal}) {
    if (blackbox::to_string(s) == name) return s;
  }
  throw InputError("unknown stage: " + name);
}

std::string score_mode_name(blackbox::ScoreMode m) { return m == blackbox::ScoreMode::kScores ? "scores" : "hard_label"; }

blackbox::ScoreMode score_mode_from_string(const std::string& name) {
  if (name == "scores") return blackbox::ScoreMode::kScores;
  if (name == "hard_label") return blackbox::ScoreMode::kHardLabel;
  throw InputError("unknown score mode: " + name);
}

json candidate_json(const text_attack::TextCandidate& c) {
  return {{"tokens", c.text.tokens()},
          {"text", c.text.text()},
          {"similarity", c.similarity},
          {"position", c.substituted_position},
          {"original_word", c.original_word},
          {"new_word", c.new_word}};
}

text_attack::TextCandidate candidate_from_json(const json& j) {
  text_attack::TextCandidate c;
  c.text = TokenSequence(j.at("tokens").get<std::vector<int>>());
  c.similarity = j.at("similarity").get<double>();
  c.substituted_position = j.at("position").get<int>();
  c.original_word = j.at("original_word").get<int>();
  c.new_word = j.at("new_word").get<int>();
  return c;
}

json candidates_json(const text_attack::CandidateList& list) {
  json a = json::array();
  for (const auto& c : list) a.push_back(candidate_json(c));
  return a;
}

text_attack::CandidateList candidates_from_json(const json& j) {
  text_attack::CandidateList out;
  for (const auto& e : j) out.push_back(candidate_from_json(e));
  return out;
}

json trace_json(const icsa::AttackTrace& t) {
  json queries = json::array();
  for (const auto& q : t.queries) {
    queries.push_back({{"stage", blackbox::to_string(q.stage)},
                       {"candidate_index", q.candidate_index},
                       {"image_iterations", q.image_iterations},
                       {"flipped", q.flipped},
                       {"confidence", q.confidence}});
  }
  json loss = json::array();
  for (const auto& p : t.loss) loss.push_back({p.iteration, p.loss});
  return {{"queries", queries},        {"loss", loss},          {"importance", t.importance},
          {"tested", candidates_json(t.tested)}, {"rejected", t.rejected}, {"ranked", candidates_json(t.ranked)},
          {"K", t.K},                  {"N_k", t.N_k}};
}

icsa::AttackTrace trace_from_json(const json& j) {
  icsa::AttackTrace t;
  for (const auto& q : j.at("queries")) {
    t.queries.push_back({stage_from_string(q.at("stage").get<std::string>()), q.at("candidate_index").get<int>(),
                         q.at("image_iterations").get<int>(), q.at("flipped").get<bool>(),
                         q.at("confidence").get<double>()});
  }
  for (const auto& p : j.at("loss")) t.loss.push_back({p.at(0).get<int>(), p.at(1).get<double>()});
  t.importance = j.at("importance").get<std::vector<int>>();
  t.tested = candidates_from_json(j.at("tested"));
  t.rejected = j.at("rejected").get<int>();
  t.ranked = candidates_from_json(j.at("ranked"));
  t.K = j.at("K").get<int>();
  t.N_k = j.at("N_k").get<int>();
  return t;
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

json to_json(const EvalConfig& c) {
  const auto& b = c.budget;
  return {{"mode", to_string(c.mode)},
          {"task", to_string(c.task_kind)},
          {"samples", c.sample_count},
          {"seed", c.seed},
          {"optimizer", bsa::to_string(c.optimizer)},
          {"momentum_decay", c.momentum_decay},
          {"substitutions", c.substitutions},
          {"score_mode", score_mode_name(c.score_mode)},
          {"budget",
           {{"sigma_i", b.sigma_i},
            {"sigma_s", b.sigma_s},
            {"steps", b.total_iterations},
            {"init_steps", b.single_modal_iterations},
            {"step_size", b.step_size},
            {"max_modified_words", b.max_modified_words}}}};
}

EvalConfig eval_config_from_json(const json& j) {
  EvalConfig c;
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.task_kind = task_kind_from_string(j.at("task").get<std::string>());
  c.sample_count = j.at("samples").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.optimizer = bsa::optimizer_from_string(j.at("optimizer").get<std::string>());
  c.momentum_decay = j.at("momentum_decay").get<double>();
  c.substitutions = j.at("substitutions").get<int>();
  c.score_mode = score_mode_from_string(j.at("score_mode").get<std::string>());
  const json& b = j.at("budget");
  c.budget.sigma_i = b.at("sigma_i").get<double>();
  c.budget.sigma_s = b.at("sigma_s").get<double>();
  c.budget.total_iterations = b.at("steps").get<int>();
  c.budget.single_modal_iterations = b.at("init_steps").get<int>();
  c.budget.step_size = b.at("step_size").get<double>();
  c.budget.max_modified_words = b.at("max_modified_words").get<int>();
  return c;
}

json report_to_json(const EvalReport& r) {
  json samples = json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"index", s.index},
                       {"status", icsa::to_string(s.status)},
                       {"queries", s.queries},
                       {"probes", s.probes},
                       {"image_iterations", s.image_iterations},
                       {"candidate_index", s.candidate_index},
                       {"linf", s.linf},
                       {"adversarial_text", s.adversarial_text},
                       {"trace", trace_json(s.trace)}});
  }
  return {{"config", to_json(r.config)},
          {"structure", r.structure},
          {"evaluated", r.evaluated},
          {"attempted", r.attempted},
          {"asr_percent", r.asr_percent},
          {"successes_by_stage",
           {{"image", r.successes_image}, {"text", r.successes_text}, {"multimodal", r.successes_multimodal}}},
          {"mean_queries", r.mean_queries},
          {"mean_image_iterations", r.mean_image_iterations},
          {"samples", samples},
          {"version", r.version},
          {"seed", r.seed},
          {"generated_at", r.generated_at}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.config = eval_config_from_json(j.at("config"));
  r.structure = j.at("structure").get<std::string>();
  r.evaluated = j.at("evaluated").get<int>();
  r.attempted = j.at("attempted").get<int>();
  r.asr_percent = j.at("asr_percent").get<double>();
  const json& st = j.at("successes_by_stage");
  r.successes_image = st.at("image").get<int>();
  r.successes_text = st.at("text").get<int>();
  r.successes_multimodal = st.at("multimodal").get<int>();
  r.mean_queries = j.at("mean_queries").get<double>();
  r.mean_image_iterations = j.at("mean_image_iterations").get<double>();
  for (const auto& s : j.at("samples")) {
    SampleRecord rec;
    rec.index = s.at("index").get<int>();
    rec.status = icsa::attack_status_from_string(s.at("status").get<std::string>());
    rec.queries = s.at("queries").get<int>();
    rec.probes = s.at("probes").get<int>();
    rec.image_iterations = s.at("image_iterations").get<int>();
    rec.candidate_index = s.at("candidate_index").get<int>();
    rec.linf = s.at("linf").get<double>();
    rec.adversarial_text = s.at("adversarial_text").get<std::vector<int>>();
    rec.trace = trace_from_json(s.at("trace"));
    r.samples.push_back(std::move(rec));
  }
  r.version = j.at("version").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.generated_at = j.value("generated_at", "");
  return r;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  json j = report_to_json(report);
  if (report.generated_at.empty()) j["generated_at"] = utc_now();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return report_from_json(json::parse(in));
}

json ablation_to_json(const AblationTable& table) {
  json rows = json::array();
  for (const auto& row : table.rows) {
    rows.push_back({{"mode", to_string(row.mode)}, {"asr_percent", row.asr_percent}, {"successes", row.successes}});
  }
  return {{"attempted", table.attempted}, {"rows", rows}, {"version", version()}};
}

void write_chart(const AblationTable& table, const std::filesystem::path& path) {
  constexpr int kBar = 60, kGap = 20, kHeight = 240, kTop = 30, kLeft = 40;
  const int width = kLeft + static_cast<int>(table.rows.size()) * (kBar + kGap) + kGap;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << kHeight + kTop + 40
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + kHeight << "\" x2=\"" << width << "\" y2=\""
      << kTop + kHeight << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const int x = kLeft + kGap + static_cast<int>(i) * (kBar + kGap);
    const int h = static_cast<int>(row.asr_percent / 100.0 * kHeight + 0.5);
    char label[32];
    std::snprintf(label, sizeof label, "%.1f", row.asr_percent);
    out << "<rect x=\"" << x << "\" y=\"" << kTop + kHeight - h << "\" width=\"" << kBar << "\" height=\"" << h
        << "\" fill=\"#4a7ab5\"/>\n";
    out << "<text x=\"" << x + kBar / 2 << "\" y=\"" << kTop + kHeight - h - 4 << "\" text-anchor=\"middle\">"
        << label << "</text>\n";
    out << "<text x=\"" << x + kBar / 2 << "\" y=\"" << kTop + kHeight + 16 << "\" text-anchor=\"middle\">"
        << to_string(row.mode) << "</text>\n";
  }
  out << "<text x=\"4\" y=\"16\">ASR (%), " << table.attempted << " samples</text>\n</svg>\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace vlattack::harness
