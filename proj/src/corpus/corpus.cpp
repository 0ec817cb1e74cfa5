// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "emgllm/corpus/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "emgllm/error.hpp"
#include "emgllm/numerics/random.hpp"
#include "json.hpp"

namespace emgllm::corpus {

namespace fs = std::filesystem;
using numerics::derive_seed;
using numerics::Rng;
using Json = nlohmann::json;

std::string modality_name(Modality) { return "unvoiced"; }

Modality parse_modality(const std::string& name) {
    if (name == "unvoiced") {
        return Modality::Unvoiced;
    }
    throw SchemaError("unknown modality '" + name + "'");
}

double CorpusManifest::total_minutes() const {
    double seconds = 0;
    for (const auto& u : utterances) {
        seconds += u.recording.seconds();
    }
    return seconds / 60.0;
}

std::size_t CorpusManifest::index_of(const std::string& utterance_id) const {
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        if (utterances[i].id() == utterance_id) {
            return i;
        }
    }
    throw ContractError("unknown utterance '" + utterance_id + "'");
}

const Utterance& CorpusManifest::find(const std::string& utterance_id) const {
    return utterances[index_of(utterance_id)];
}

std::vector<std::string> CorpusManifest::ids() const {
    std::vector<std::string> out;
    out.reserve(utterances.size());
    for (const auto& u : utterances) {
        out.push_back(u.id());
    }
    return out;
}

const std::vector<std::string>& builtin_vocabulary() {
    static const std::vector<std::string> words = {
        "january", "february", "march",    "april",    "may",       "june",      "july",
        "august",  "september", "october", "november", "december",  "monday",    "tuesday",
        "wednesday", "thursday", "friday", "saturday", "sunday",    "one",       "two",
        "three",   "four",     "five",     "six",      "seven",     "eight",     "nine",
        "ten",     "eleven",   "twelve",   "thirteen", "fourteen",  "fifteen",   "sixteen",
        "seventeen", "eighteen", "nineteen", "twenty", "thirty",    "forty",     "fifty",
        "first",   "second",   "third",    "fourth",   "fifth",     "sixth",     "seventh",
        "eighth",  "ninth",    "tenth",    "yes",      "no",        "am",        "pm",
        "at",      "the",      "of",       "on",       "half",      "past",      "to",
        "morning", "evening",  "afternoon", "oclock"};
    return words;
}

std::vector<std::string> make_vocabulary(int vocab_size) {
    if (vocab_size < 2) {
        throw ParameterError("vocab_size must be >= 2, got " + std::to_string(vocab_size));
    }
    const auto& base = builtin_vocabulary();
    std::vector<std::string> out;
    for (int i = 0; i < vocab_size; ++i) {
        if (i < static_cast<int>(base.size())) {
            out.push_back(base[static_cast<std::size_t>(i)]);
        } else {
            out.push_back("word" + std::to_string(i));
        }
    }
    return out;
}

namespace {

void validate(const SyntheticConfig& c) {
    if (c.vocab_size < 2) {
        throw ParameterError("vocab_size must be >= 2");
    }
    if (c.n_utterances < 1) {
        throw ParameterError("n_utterances must be >= 1");
    }
    if (c.n_speakers < 1) {
        throw ParameterError("n_speakers must be >= 1");
    }
    if (c.words_per_utterance_mean < 1.0) {
        throw ParameterError("words_per_utterance_mean must be >= 1, got " +
                             std::to_string(c.words_per_utterance_mean));
    }
    if (c.sample_rate <= 0 || c.channels < 1) {
        throw ParameterError("sample_rate and channels must be positive");
    }
    if (c.noise_sigma < 0 || c.warp < 0 || c.warp >= 1) {
        throw ParameterError("noise_sigma must be >= 0 and warp in [0, 1)");
    }
    if (c.min_word_seconds <= 0 || c.max_word_seconds < c.min_word_seconds ||
        c.silence_seconds < 0) {
        throw ParameterError("word and silence durations are inconsistent");
    }
}

// Linear resampling of a [L x C] template to n rows.
void stretch_into(const Tensor<float>& tpl, int n, std::vector<float>& out) {
    const int len = tpl.rows();
    const int c = tpl.cols();
    for (int i = 0; i < n; ++i) {
        const double pos = n == 1 ? 0.0 : static_cast<double>(i) * (len - 1) / (n - 1);
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(i0 + 1, len - 1);
        const double w = pos - i0;
        for (int ch = 0; ch < c; ++ch) {
            out.push_back(static_cast<float>((1 - w) * tpl.at(i0, ch) + w * tpl.at(i1, ch)));
        }
    }
}

}  // namespace

SpeakerProfile make_speaker(const SyntheticConfig& config, int speaker_index) {
    validate(config);
    Rng rng(derive_seed(derive_seed(config.seed, "speaker"), static_cast<std::uint64_t>(speaker_index)));
    SpeakerProfile sp;
    sp.speaker_id = "spk" + std::to_string(speaker_index);
    sp.noise_sigma = config.noise_sigma;
    sp.warp = config.warp;
    std::uniform_real_distribution<double> gain(0.5, 2.0);
    for (int ch = 0; ch < config.channels; ++ch) {
        sp.gains.push_back(static_cast<float>(gain(rng)));
    }
    const double sr = config.sample_rate;
    std::uniform_real_distribution<double> dur(config.min_word_seconds, config.max_word_seconds);
    std::uniform_real_distribution<double> freq(8.0, sr / 8.0);
    std::uniform_real_distribution<double> phase(0.0, 2 * M_PI);
    std::uniform_real_distribution<double> amp(0.3, 1.0);
    std::uniform_int_distribution<int> nsines(3, 6);
    for (int w = 0; w < config.vocab_size; ++w) {
        const int len = std::max(4, static_cast<int>(std::lround(dur(rng) * sr)));
        Tensor<float> tpl({len, config.channels});
        for (int ch = 0; ch < config.channels; ++ch) {
            const int n = nsines(rng);
            std::vector<double> f(n), p(n), a(n);
            for (int s = 0; s < n; ++s) {
                f[s] = freq(rng);
                p[s] = phase(rng);
                a[s] = amp(rng);
            }
            for (int t = 0; t < len; ++t) {
                const double env = std::pow(std::sin(M_PI * (t + 0.5) / len), 2);
                double v = 0;
                for (int s = 0; s < n; ++s) {
                    v += a[s] * std::sin(2 * M_PI * f[s] * t / sr + p[s]);
                }
                tpl.at(t, ch) = static_cast<float>(env * v);
            }
        }
        sp.templates.push_back(std::move(tpl));
    }
    return sp;
}

TranscriptModel::TranscriptModel(int vocab_size, double mean_words, std::uint64_t seed)
    : mean_words_(mean_words) {
    if (vocab_size < 2) {
        throw ParameterError("vocab_size must be >= 2");
    }
    if (mean_words < 1.0) {
        throw ParameterError("words_per_utterance_mean must be >= 1");
    }
    Rng rng(derive_seed(seed, "transcripts"));
    std::vector<int> all(static_cast<std::size_t>(vocab_size));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    starts_.assign(all.begin(), all.begin() + std::min(8, vocab_size));
    const int fan = std::min(3, vocab_size - 1);
    successors_.resize(static_cast<std::size_t>(vocab_size));
    for (int w = 0; w < vocab_size; ++w) {
        std::vector<int> others;
        for (int v = 0; v < vocab_size; ++v) {
            if (v != w) {
                others.push_back(v);
            }
        }
        std::shuffle(others.begin(), others.end(), rng);
        successors_[static_cast<std::size_t>(w)].assign(others.begin(), others.begin() + fan);
    }
}

std::vector<int> TranscriptModel::sample(std::uint64_t seed) const {
    Rng rng(seed);
    std::poisson_distribution<int> extra(mean_words_ - 1.0);
    const int n = 1 + std::min(extra(rng), 11);
    std::vector<int> words;
    words.push_back(starts_[std::uniform_int_distribution<std::size_t>(0, starts_.size() - 1)(rng)]);
    while (static_cast<int>(words.size()) < n) {
        const auto& next = successors_[static_cast<std::size_t>(words.back())];
        words.push_back(next[std::uniform_int_distribution<std::size_t>(0, next.size() - 1)(rng)]);
    }
    return words;
}

Tensor<float> render_utterance(const SpeakerProfile& speaker, const std::vector<int>& words,
                               const SyntheticConfig& config, std::uint64_t rng_seed) {
    if (words.empty()) {
        throw ContractError("render_utterance: empty word sequence");
    }
    const int c = config.channels;
    Rng rng(rng_seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int base_silence = static_cast<int>(std::lround(config.silence_seconds * config.sample_rate));
    auto silence = [&] {
        const double jitter = speaker.warp > 0 ? 1.0 + 0.5 * unit(rng) : 1.0;
        return static_cast<int>(std::lround(base_silence * jitter));
    };
    std::vector<float> data;
    data.insert(data.end(), static_cast<std::size_t>(silence()) * c, 0.0f);
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& tpl = speaker.templates.at(static_cast<std::size_t>(words[i]));
        const double factor = 1.0 + speaker.warp * unit(rng);
        const int n = std::max(2, static_cast<int>(std::lround(tpl.rows() * factor)));
        stretch_into(tpl, n, data);
        data.insert(data.end(), static_cast<std::size_t>(silence()) * c, 0.0f);
    }
    const int len = static_cast<int>(data.size() / c);
    Tensor<float> out({len, c}, std::move(data));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int t = 0; t < len; ++t) {
        for (int ch = 0; ch < c; ++ch) {
            double v = out.at(t, ch) * speaker.gains[static_cast<std::size_t>(ch)];
            if (speaker.noise_sigma > 0) {
                v += speaker.noise_sigma * noise(rng);
            }
            out.at(t, ch) = static_cast<float>(v);
        }
    }
    return out;
}

CorpusManifest generate_synthetic_corpus(const SyntheticConfig& config) {
    validate(config);
    CorpusManifest m;
    m.vocabulary = make_vocabulary(config.vocab_size);
    std::vector<SpeakerProfile> speakers;
    for (int s = 0; s < config.n_speakers; ++s) {
        speakers.push_back(make_speaker(config, s));
        m.speakers.push_back(speakers.back().speaker_id);
    }
    TranscriptModel lm(config.vocab_size, config.words_per_utterance_mean, config.seed);
    const std::uint64_t utt_seed = derive_seed(config.seed, "utterances");
    char buf[32];
    for (int i = 0; i < config.n_utterances; ++i) {
        const std::uint64_t s = derive_seed(utt_seed, static_cast<std::uint64_t>(i));
        const auto words = lm.sample(derive_seed(s, "words"));
        const auto& sp = speakers[static_cast<std::size_t>(i % config.n_speakers)];
        Utterance u;
        std::snprintf(buf, sizeof(buf), "utt%05d", i);
        u.recording.utterance_id = buf;
        u.recording.speaker_id = sp.speaker_id;
        u.recording.sample_rate = config.sample_rate;
        u.recording.signal = render_utterance(sp, words, config, derive_seed(s, "render"));
        for (std::size_t w = 0; w < words.size(); ++w) {
            u.transcript += (w ? " " : "") + m.vocabulary[static_cast<std::size_t>(words[w])];
        }
        u.word_count = static_cast<int>(words.size());
        m.utterances.push_back(std::move(u));
    }
    return m;
}

void write_f32(const fs::path& path, const Tensor<float>& matrix) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    std::vector<float> buf(matrix.storage());
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : buf) {
            auto u = std::bit_cast<std::uint32_t>(v);
            u = __builtin_bswap32(u);
            v = std::bit_cast<float>(u);
        }
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) {
        throw IoError("short write to " + path.string());
    }
}

Tensor<float> read_f32(const fs::path& path, int cols) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw MissingArtifactError("cannot open " + path.string());
    }
    is.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(is.tellg());
    is.seekg(0);
    if (cols < 1 || bytes % (sizeof(float) * static_cast<std::size_t>(cols)) != 0) {
        throw SchemaError(path.string() + ": size " + std::to_string(bytes) +
                          " is not a multiple of 4*" + std::to_string(cols));
    }
    const int rows = static_cast<int>(bytes / sizeof(float) / static_cast<std::size_t>(cols));
    Tensor<float> out({rows, cols});
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
    if constexpr (std::endian::native == std::endian::big) {
        for (auto& v : out.values()) {
            v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
        }
    }
    return out;
}

void save_corpus(const CorpusManifest& manifest, const fs::path& dir) {
    fs::create_directories(dir / "signals");
    {
        std::ofstream vs(dir / "vocab.txt", std::ios::trunc);
        for (const auto& w : manifest.vocabulary) {
            vs << w << '\n';
        }
    }
    std::ofstream ms(dir / "manifest.jsonl", std::ios::trunc);
    if (!ms) {
        throw IoError("cannot write " + (dir / "manifest.jsonl").string());
    }
    for (const auto& u : manifest.utterances) {
        const std::string rel = "signals/" + u.id() + ".f32";
        write_f32(dir / rel, u.recording.signal);
        Json j = {{"utterance_id", u.id()},
                  {"speaker_id", u.recording.speaker_id},
                  {"transcript", u.transcript},
                  {"signal_file", rel},
                  {"sample_rate", u.recording.sample_rate},
                  {"channels", u.recording.channels()},
                  {"modality", modality_name(u.recording.modality)}};
        ms << j.dump() << '\n';
    }
}

namespace {

const Json& require_field(const Json& j, const char* field, Json::value_t type, int line) {
    auto it = j.find(field);
    bool ok = it != j.end();
    if (ok) {
        if (type == Json::value_t::number_float) {
            ok = it->is_number();
        } else if (type == Json::value_t::number_integer) {
            ok = it->is_number_integer();
        } else {
            ok = it->type() == type;
        }
    }
    if (!ok) {
        throw SchemaError("manifest line " + std::to_string(line) + ": field '" + field +
                          "' missing or of wrong type");
    }
    return *it;
}

}  // namespace

CorpusManifest load_corpus(const fs::path& path) {
    const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.jsonl" : path;
    const fs::path dir = manifest_path.parent_path();
    std::ifstream ms(manifest_path);
    if (!ms) {
        throw MissingArtifactError("missing corpus manifest " + manifest_path.string());
    }
    CorpusManifest m;
    {
        std::ifstream vs(dir / "vocab.txt");
        if (!vs) {
            throw MissingArtifactError("missing vocabulary file " + (dir / "vocab.txt").string());
        }
        std::set<std::string> seen;
        for (std::string w; std::getline(vs, w);) {
            if (w.empty()) {
                continue;
            }
            if (!seen.insert(w).second) {
                throw SchemaError("vocabulary: duplicate word '" + w + "'");
            }
            m.vocabulary.push_back(w);
        }
    }
    std::set<std::string> speakers;
    std::set<std::string> ids;
    int line_no = 0;
    for (std::string line; std::getline(ms, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw SchemaError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) {
            throw SchemaError("manifest line " + std::to_string(line_no) + ": not an object");
        }
        using VT = Json::value_t;
        Utterance u;
        u.recording.utterance_id = require_field(j, "utterance_id", VT::string, line_no);
        u.recording.speaker_id = require_field(j, "speaker_id", VT::string, line_no);
        u.transcript = require_field(j, "transcript", VT::string, line_no);
        const std::string file = require_field(j, "signal_file", VT::string, line_no);
        u.recording.sample_rate = require_field(j, "sample_rate", VT::number_float, line_no);
        const int channels = require_field(j, "channels", VT::number_integer, line_no);
        u.recording.modality = parse_modality(require_field(j, "modality", VT::string, line_no));
        if (channels < 1 || u.recording.sample_rate <= 0) {
            throw SchemaError("manifest line " + std::to_string(line_no) +
                              ": field 'channels' or 'sample_rate' not positive");
        }
        if (!ids.insert(u.id()).second) {
            throw SchemaError("manifest line " + std::to_string(line_no) +
                              ": duplicate utterance_id '" + u.id() + "'");
        }
        const fs::path signal = dir / file;
        if (!fs::exists(signal)) {
            throw MissingArtifactError("missing signal for utterance '" + u.id() + "' (" +
                                       signal.string() + ")");
        }
        u.recording.signal = read_f32(signal, channels);
        u.word_count = static_cast<int>(split_words(u.transcript).size());
        if (speakers.insert(u.recording.speaker_id).second) {
            m.speakers.push_back(u.recording.speaker_id);
        }
        m.utterances.push_back(std::move(u));
    }
    return m;
}

std::vector<FoldAssignment> split_folds(const CorpusManifest& manifest, std::array<double, 3> ratios,
                                        int k, std::uint64_t seed) {
    if (k < 1) {
        throw ParameterError("k must be >= 1");
    }
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || !(total > 0)) {
        throw ParameterError("split ratios must be non-negative with a positive sum");
    }
    const double test_frac = ratios[2] / total;
    const double val_frac = ratios[1] / total;
    if (k * test_frac > 1.0 + 1e-9) {
        throw ParameterError("k x test fraction exceeds 1 (" + std::to_string(k * test_frac) + ")");
    }
    const int n = static_cast<int>(manifest.utterances.size());
    const int n_test = static_cast<int>(std::lround(n * test_frac));
    const int n_val = static_cast<int>(std::lround(n * val_frac));
    if (n_test + n_val > n) {
        throw ParameterError("split leaves a negative train partition");
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "folds"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<FoldAssignment> folds;
    for (int f = 0; f < k; ++f) {
        FoldAssignment a;
        std::vector<char> role(static_cast<std::size_t>(n), 't');
        const int start = f * n_test;
        for (int i = 0; i < n_test; ++i) {
            role[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])] = 'x';
        }
        for (int i = 0; i < n_val; ++i) {
            const int pos = (start + n_test + i) % n;
            role[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = 'v';
        }
        for (int i = 0; i < n; ++i) {
            const auto& id = manifest.utterances[static_cast<std::size_t>(i)].id();
            switch (role[static_cast<std::size_t>(i)]) {
                case 'x': a.test.push_back(id); break;
                case 'v': a.val.push_back(id); break;
                default: a.train.push_back(id); break;
            }
        }
        folds.push_back(std::move(a));
    }
    return folds;
}

std::vector<std::string> subsample_minutes(const std::vector<std::string>& train_ids,
                                           const CorpusManifest& manifest, double minutes,
                                           std::uint64_t seed) {
    if (train_ids.empty()) {
        throw ContractError("subsample_minutes: empty training set");
    }
    if (!(minutes > 0)) {
        throw ParameterError("subsample minutes must be > 0");
    }
    std::vector<double> secs;
    double total = 0;
    for (const auto& id : train_ids) {
        secs.push_back(manifest.find(id).recording.seconds());
        total += secs.back();
    }
    const double budget = minutes * 60.0;
    if (budget >= total - 1e-9) {
        return train_ids;
    }
    std::vector<std::size_t> order(train_ids.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "subsample"));
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> keep(train_ids.size(), 0);
    double acc = 0;
    for (std::size_t i : order) {
        if (acc + secs[i] <= budget + 1e-9) {
            acc += secs[i];
            keep[i] = 1;
        }
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
        if (keep[i]) {
            out.push_back(train_ids[i]);
        }
    }
    return out;
}

std::string normalize_transcript(std::string_view text) {
    std::string out;
    bool pending_space = false;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::ispunct(c)) {
            continue;
        }
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) {
        out.push_back(std::move(cur));
    }
    return out;
}

}  // namespace emgllm::corpus
