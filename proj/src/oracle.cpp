#include "sempred/oracle.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace sempred {

namespace {

constexpr char kMemoSep = '\x1f';

class SystemClock : public Clock {
 public:
  std::uint64_t now_ms() override {
    return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                          std::chrono::steady_clock::now().time_since_epoch())
                                          .count());
  }
  void sleep_ms(std::uint64_t ms) override { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }
};

}  // namespace

std::shared_ptr<Clock> system_clock() { return std::make_shared<SystemClock>(); }

void RateLimitPolicy::validate() const {
  if (tokens_per_minute == 0) fail(ErrorCode::invalid_argument, "tokens_per_minute must be positive");
  if (max_concurrent < 1) fail(ErrorCode::invalid_argument, "max_concurrent must be positive");
  if (max_attempts < 1) fail(ErrorCode::invalid_argument, "max_attempts must be positive");
}

RateLimiter::RateLimiter(std::uint64_t tokens_per_minute, std::shared_ptr<Clock> clock)
    : budget_(tokens_per_minute), clock_(std::move(clock)) {
  if (budget_ == 0) fail(ErrorCode::invalid_argument, "tokens_per_minute must be positive");
}

void RateLimiter::acquire(std::uint64_t tokens) {
  if (tokens > budget_)
    fail(ErrorCode::invalid_argument, "request of " + std::to_string(tokens) +
                                          " tokens exceeds the per-minute budget of " + std::to_string(budget_));
  for (;;) {
    std::uint64_t wait = 0;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      const std::uint64_t now = clock_->now_ms();
      while (!issued_.empty() && issued_.front().first + 60000 <= now) {
        in_window_ -= issued_.front().second;
        issued_.pop_front();
      }
      if (in_window_ + tokens <= budget_) {
        issued_.emplace_back(now, tokens);
        in_window_ += tokens;
        return;
      }
      wait = issued_.front().first + 60000 - now;
      if (wait == 0) wait = 1;
    }
    clock_->sleep_ms(wait);
  }
}

bool Oracle::label(const std::string& query, const std::string& doc_id) {
  const std::string ids[1] = {doc_id};
  return label_batch(query, ids)[0] != 0;
}

Oracle::BatchLabelResult Oracle::try_label_batch(const std::string& query, std::span<const std::string> doc_ids) {
  BatchLabelResult result;
  result.labels.assign(doc_ids.size(), 0);
  result.ok.assign(doc_ids.size(), 0);
  result.all_ok = true;

  std::vector<std::string> missing;
  {
    std::lock_guard<std::mutex> lk(mutex_);
    std::unordered_map<std::string, bool> seen;
    for (const auto& id : doc_ids) {
      if (memo_.contains(query + kMemoSep + id) || seen.contains(id)) continue;
      seen.emplace(id, true);
      missing.push_back(id);
    }
  }

  if (!missing.empty()) {
    std::vector<std::uint8_t> vals(missing.size(), 0);
    std::vector<std::string> errors(missing.size());
    label_uncached_batch(query, missing, vals, errors);
    std::lock_guard<std::mutex> lk(mutex_);
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (!errors[i].empty()) continue;
      memo_.emplace(query + kMemoSep + missing[i], vals[i] != 0);
      ++invocations_;
    }
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (errors[i].empty()) continue;
      if (result.first_error.empty()) result.first_error = missing[i] + ": " + errors[i];
      result.all_ok = false;
    }
  }

  std::lock_guard<std::mutex> lk(mutex_);
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    auto it = memo_.find(query + kMemoSep + doc_ids[i]);
    if (it == memo_.end()) {
      result.all_ok = false;
      continue;
    }
    result.labels[i] = it->second ? 1 : 0;
    result.ok[i] = 1;
  }
  return result;
}

std::vector<std::uint8_t> Oracle::label_batch(const std::string& query, std::span<const std::string> doc_ids) {
  BatchLabelResult r = try_label_batch(query, doc_ids);
  if (!r.all_ok) fail(ErrorCode::oracle, "oracle batch failed: " + r.first_error);
  return std::move(r.labels);
}

std::size_t Oracle::invocation_count() const {
  std::lock_guard<std::mutex> lk(mutex_);
  return invocations_;
}

void Oracle::label_uncached_batch(const std::string& query, const std::vector<std::string>& doc_ids,
                                  std::vector<std::uint8_t>& out, std::vector<std::string>& errors) {
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    try {
      out[i] = label_uncached(query, doc_ids[i]) ? 1 : 0;
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  }
}

bool MockOracle::label_uncached(const std::string& query, const std::string& doc_id) {
  (void)query;
  if (!labels_.contains(doc_id)) fail(ErrorCode::oracle, "mock oracle has no label for doc_id: " + doc_id);
  return labels_.at(doc_id);
}

bool parse_yes_no(const std::string& reply, bool& value) {
  std::size_t i = 0;
  while (i < reply.size() && std::isspace(static_cast<unsigned char>(reply[i]))) ++i;
  std::size_t j = i;
  while (j < reply.size() && !std::isspace(static_cast<unsigned char>(reply[j]))) ++j;
  std::string token = reply.substr(i, j - i);
  while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.back()))) token.pop_back();
  for (auto& c : token) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (token == "YES") {
    value = true;
    return true;
  }
  if (token == "NO") {
    value = false;
    return true;
  }
  return false;
}

std::uint64_t estimate_tokens(const std::string& text) {
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(text.size()) / 4);
}

std::string render_prompt(const std::string& tmpl, const std::string& query, const std::string& document) {
  std::string out = tmpl;
  auto replace_all = [&](const std::string& key, const std::string& val) {
    std::size_t pos = 0;
    while ((pos = out.find(key, pos)) != std::string::npos) {
      out.replace(pos, key.size(), val);
      pos += val.size();
    }
  };
  replace_all("{query}", query);
  replace_all("{document}", document);
  return out;
}

HttpLlmOracle::HttpLlmOracle(LlmEndpointConfig config, DocTextProvider doc_text, std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      doc_text_(std::move(doc_text)),
      clock_(clock ? std::move(clock) : system_clock()),
      limiter_(config_.rate.tokens_per_minute, clock_) {
  config_.rate.validate();
  if (config_.base_url.empty()) fail(ErrorCode::invalid_argument, "oracle base_url is empty");
  if (!doc_text_) fail(ErrorCode::invalid_argument, "oracle needs a document text provider");
}

bool HttpLlmOracle::request_once(const std::string& query, const std::string& doc_text, std::string& error) {
  const std::string user = render_prompt(config_.prompt_template, query, doc_text);

  nlohmann::json body;
  body["model"] = config_.model;
  body["temperature"] = 0;
  body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", config_.system_prompt}},
                                            {{"role", "user"}, {"content", user}}});
  const std::string payload = body.dump();

  limiter_.acquire(estimate_tokens(config_.system_prompt + user));

  httplib::Client client(config_.base_url);
  client.set_connection_timeout(10, 0);
  client.set_read_timeout(60, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post(config_.path, headers, payload, "application/json");
  if (!res) {
    error = "transport error: " + httplib::to_string(res.error());
    return false;
  }
  if (res->status != 200) {
    error = "http status " + std::to_string(res->status);
    return false;
  }
  nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty() ||
      !reply["choices"][0].contains("message") || !reply["choices"][0]["message"].contains("content")) {
    error = "malformed response body";
    return false;
  }
  const std::string content = reply["choices"][0]["message"]["content"].get<std::string>();
  bool value = false;
  if (!parse_yes_no(content, value)) {
    error = "unparseable reply: \"" + content.substr(0, 64) + "\"";
    return false;
  }
  return value;
}

bool HttpLlmOracle::label_uncached(const std::string& query, const std::string& doc_id) {
  const std::string text = doc_text_(doc_id);  // permanent failure, not retried
  std::string error;
  for (int attempt = 0; attempt < config_.rate.max_attempts; ++attempt) {
    if (attempt > 0) clock_->sleep_ms(config_.rate.backoff_base_ms << (attempt - 1));
    error.clear();
    const bool value = request_once(query, text, error);
    if (error.empty()) return value;
  }
  fail(ErrorCode::oracle, "oracle request failed for doc_id " + doc_id + " after " +
                              std::to_string(config_.rate.max_attempts) + " attempts: " + error);
}

void HttpLlmOracle::label_uncached_batch(const std::string& query, const std::vector<std::string>& doc_ids,
                                         std::vector<std::uint8_t>& out, std::vector<std::string>& errors) {
  const auto workers = static_cast<std::size_t>(
      std::min<std::size_t>(static_cast<std::size_t>(config_.rate.max_concurrent), doc_ids.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= doc_ids.size()) return;
      try {
        out[i] = label_uncached(query, doc_ids[i]) ? 1 : 0;
      } catch (const Error& e) {
        errors[i] = e.what();
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
}

}  // namespace sempred
