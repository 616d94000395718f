#pragma once

// Synthetic task-oriented conversations. Two profiles:
//
//   cable-like    23 intents, 26 slot types, multi-goal service dialogues
//   booking-like  19 intents, 5 slot types, restaurant search/booking
//
// First turns are interpretable in isolation. Follow-up turns are mostly
// bare slot values, confirmations and corrections whose intent is only
// recoverable from the preceding intents and dialog acts.

#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "casa/data.hpp"
#include "casa/tensor.hpp"

namespace casa {

enum class Profile { BookingLike, CableLike };

inline const std::string kElicitSlot = "ElicitSlot";
inline const std::string kClose = "Close";
inline const std::string kConfirm = "Confirm";
inline const std::string kInform = "Inform";

namespace synth {

using SlotValues = std::map<std::string, std::vector<std::string>>;

/// Token/tag accumulator for one user utterance.
struct Utterance {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;

  void words(std::string_view text) {
    for (auto& t : tokenize(text)) {
      tokens.push_back(std::move(t));
      tags.push_back(kOutsideSymbol);
    }
  }
  void value(const std::string& slot, std::string_view text) {
    bool first = true;
    for (auto& t : tokenize(text)) {
      tokens.push_back(std::move(t));
      tags.push_back((first ? "B-" : "I-") + slot);
      first = false;
    }
  }

  RawTurn turn(const std::string& intent, const std::string& act) const {
    RawTurn t;
    for (const auto& tok : tokens) t.text += (t.text.empty() ? "" : " ") + tok;
    t.tokens = tokens;
    t.slots = tags;
    t.intent = intent;
    t.dialog_act = act;
    return t;
  }
};

class Sampler {
public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[index(v.size())];
  }

private:
  Rng rng_;
};

/// Renders a template such as "move my service to {new_zip}", filling each
/// placeholder with a sampled value. Filled slots are added to `filled`.
inline Utterance render(std::string_view tmpl, const SlotValues& values, Sampler& s,
                        std::map<std::string, std::string>& filled) {
  Utterance u;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      u.words(tmpl.substr(pos));
      break;
    }
    u.words(tmpl.substr(pos, open - pos));
    auto close = tmpl.find('}', open);
    std::string slot(tmpl.substr(open + 1, close - open - 1));
    const std::string& v = s.pick(values.at(slot));
    u.value(slot, v);
    filled[slot] = v;
    pos = close + 1;
  }
  return u;
}

struct TaskSpec {
  std::string intent;
  std::vector<std::string> required;
  std::vector<std::string> requests;
};

// ---- cable-like -----------------------------------------------------------

inline const SlotValues& cable_values() {
  static const std::vector<std::string> zips = {"94110", "10001", "60614", "73301", "30301", "98101", "02139", "85001"};
  static const std::vector<std::string> four_digits = {"1234", "4242", "9034", "5100", "7788", "3141"};
  static const SlotValues v = {
      {"user_name", {"john smith", "maria garcia", "wei chen", "aisha khan", "tom baker", "lena novak"}},
      {"account_number", {"4471203", "5582019", "1190342", "7730158", "3306621"}},
      {"current_zip", zips},
      {"new_zip", zips},
      {"phone_number", {"415 555 0134", "212 555 0199", "312 555 0147", "206 555 0112"}},
      {"email", {"john@mail.com", "maria@inbox.net", "wchen@post.org", "tbaker@mail.com"}},
      {"street_address", {"12 oak street", "450 pine avenue", "9 elm road", "77 lake drive", "310 main street"}},
      {"city", {"boston", "austin", "denver", "seattle", "chicago", "miami"}},
      {"date", {"tomorrow", "next monday", "june 5th", "friday", "the 12th", "next week"}},
      {"time", {"5pm", "9am", "noon", "3:30pm", "10am", "morning"}},
      {"service_plan", {"basic", "premium", "ultra", "family plan", "starter"}},
      {"channel_name", {"hbo", "espn", "cnn", "discovery", "nickelodeon", "showtime"}},
      {"channel_number", {"206", "512", "33", "101", "48"}},
      {"device_type", {"modem", "router", "cable box", "remote"}},
      {"payment_method", {"credit card", "debit card", "bank transfer", "paypal"}},
      {"card_number", four_digits},
      {"pin", four_digits},
      {"amount", {"50 dollars", "120 dollars", "75 dollars", "30 dollars", "all of it"}},
      {"bill_month", {"january", "february", "march", "last month", "april"}},
      {"modem_model", {"arris sb8200", "netgear cm500", "motorola mb7621"}},
      {"tv_package", {"sports pack", "movie pack", "kids pack", "news pack"}},
      {"internet_speed", {"100 mbps", "500 mbps", "1 gig", "300 mbps"}},
      {"reason", {"too expensive", "moving away", "bad service", "switching providers"}},
      {"appointment_type", {"installation", "repair", "inspection"}},
      {"language", {"spanish", "english", "french", "mandarin"}},
      {"number_of_boxes", {"one", "two", "three", "four"}},
  };
  return v;
}

inline const std::map<std::string, std::string>& cable_slot_phrases() {
  static const std::map<std::string, std::string> p = {
      {"user_name", "name"},           {"account_number", "account number"},
      {"current_zip", "zip code"},     {"new_zip", "new zip code"},
      {"phone_number", "number"},      {"email", "email"},
      {"street_address", "address"},   {"city", "city"},
      {"date", "date"},                {"time", "time"},
      {"service_plan", "plan"},        {"channel_name", "channel"},
      {"channel_number", "channel"},   {"device_type", "device"},
      {"payment_method", "payment method"}, {"card_number", "card"},
      {"pin", "pin"},                  {"amount", "amount"},
      {"bill_month", "month"},         {"modem_model", "model"},
      {"tv_package", "package"},       {"internet_speed", "speed"},
      {"reason", "reason"},            {"appointment_type", "appointment"},
      {"language", "language"},        {"number_of_boxes", "count"},
  };
  return p;
}

inline const std::vector<TaskSpec>& cable_tasks() {
  static const std::vector<TaskSpec> t = {
      {"StartService", {"service_plan", "street_address", "date"},
       {"i want to start service", "i would like to sign up for {service_plan}", "start new service at {street_address}"}},
      {"StopService", {"account_number", "reason"},
       {"i want to cancel my service", "please stop my service", "cancel my service because it is {reason}"}},
      {"MoveService", {"current_zip", "new_zip", "date"},
       {"i am moving and need to transfer my service", "move my service to {new_zip}", "i need service at my new home"}},
      {"UpgradeService", {"service_plan", "tv_package"},
       {"i want to upgrade my plan", "upgrade me to {service_plan}", "can i get a better plan"}},
      {"DowngradeService", {"service_plan"},
       {"i want to downgrade my plan", "switch me to a cheaper plan", "downgrade me to {service_plan}"}},
      {"PayBill", {"payment_method", "card_number", "amount"},
       {"i want to pay my bill", "pay {amount} on my bill", "i would like to make a payment with {payment_method}"}},
      {"ViewBill", {"bill_month"}, {"show me my bill", "what was my bill for {bill_month}", "i want to see my statement"}},
      {"ViewDataUsage", {}, {"how much data have i used", "show my data usage", "am i close to my data limit"}},
      {"ScheduleAppointment", {"appointment_type", "date", "time"},
       {"i need to schedule a technician", "book a {appointment_type} appointment", "can someone come out {date}"}},
      {"CancelAppointment", {"date"},
       {"cancel my appointment", "i can not make my appointment on {date}", "please cancel the technician visit"}},
      {"ResetPassword", {"email"}, {"i forgot my password", "reset my password", "i can not log in to my account"}},
      {"ChangePin", {"pin"}, {"i want to change my pin", "update my pin to {pin}", "set a new pin"}},
      {"AddChannel", {"channel_name"}, {"add a channel to my lineup", "i want to add {channel_name}", "can i get a new channel"}},
      {"RemoveChannel", {"channel_number"},
       {"remove a channel", "take channel {channel_number} off my lineup", "i want to drop a channel"}},
      {"ReportOutage", {"city", "current_zip"},
       {"my internet is down", "there is an outage in {city}", "report an outage"}},
      {"TroubleshootModem", {"modem_model"},
       {"my modem is not working", "help me fix my {modem_model}", "the modem keeps blinking"}},
      {"OrderDevice", {"device_type", "number_of_boxes"},
       {"i want to order equipment", "order a new {device_type}", "i need more equipment"}},
      {"ReturnDevice", {"device_type"}, {"i need to return equipment", "return my {device_type}", "how do i send back a device"}},
      {"UpdateContactInfo", {"user_name", "phone_number", "language"},
       {"update my contact info", "change my phone number to {phone_number}", "i want to update my profile"}},
      {"ChangeSpeed", {"internet_speed"},
       {"i want faster internet", "change my speed to {internet_speed}", "can i change my internet speed"}},
  };
  return t;
}

inline const std::vector<TaskSpec>& side_questions() {
  static const std::vector<TaskSpec> t = {
      cable_tasks()[7],
      {"AskStoreHours", {}, {"what are your hours", "when are you open", "are you open on sunday"}},
      {"CheckBalance", {}, {"what is my balance", "how much do i owe", "when is my payment due"}},
  };
  return t;
}

inline void emit_cable_conversation(Sampler& s, RawConversation& conv) {
  const auto& values = cable_values();
  const auto& tasks = cable_tasks();
  const auto& phrases = cable_slot_phrases();
  static const std::vector<std::string> bare = {"{v}", "{v}", "{v}", "it is {v}", "{v} please", "my {p} is {v}"};
  static const std::vector<std::string> yes = {"yes", "yes please", "sure", "that is right", "correct", "yep"};
  static const std::vector<std::string> change = {"change it to {v}", "actually make it {v}", "no , {v}"};
  static const std::vector<std::string> bye = {"bye", "thanks , bye", "that is all", "goodbye"};

  auto& turns = conv.turns;
  std::size_t goals = s.chance(0.45) ? 2 : 1;
  std::size_t prev_task = tasks.size();
  for (std::size_t g = 0; g < goals; ++g) {
    std::size_t ti;
    do ti = s.index(tasks.size());
    while (ti == prev_task);
    prev_task = ti;
    const TaskSpec& task = tasks[ti];
    std::map<std::string, std::string> filled;
    Utterance req = render(s.pick(task.requests), values, s, filled);

    auto respond = [&](const Utterance& u, const std::string& intent, const std::string& act) {
      turns.push_back(u.turn(intent, act));
    };

    // Account verification precedes about half of the tasks.
    std::vector<std::string> required = task.required;
    if (!required.empty() && required.front() != "account_number" && s.chance(0.5))
      required.insert(required.begin(), "account_number");

    if (required.empty()) {
      respond(req, task.intent, kInform);
      continue;
    }
    Utterance last = req;
    for (;;) {
      std::string missing;
      for (const auto& r : required)
        if (!filled.count(r)) {
          missing = r;
          break;
        }
      if (missing.empty()) break;
      respond(last, task.intent, kElicitSlot);
      auto answer = [&](const std::string& slot, const std::string& v) {
        std::string form = s.pick(bare);
        Utterance u;
        auto vpos = form.find("{v}");
        std::string before = form.substr(0, vpos);
        if (auto ppos = before.find("{p}"); ppos != std::string::npos)
          before = before.substr(0, ppos) + phrases.at(slot) + before.substr(ppos + 3);
        u.words(before);
        u.value(slot, v);
        u.words(form.substr(vpos + 3));
        return u;
      };
      if (s.chance(0.25)) {
        // Side questions before answering the elicitation.
        std::size_t asides = s.chance(0.4) ? 2 : 1;
        for (std::size_t a = 0; a < asides; ++a) {
          std::map<std::string, std::string> ignored;
          const TaskSpec& info = s.pick(side_questions());
          respond(render(s.pick(info.requests), values, s, ignored), info.intent, kInform);
        }
      } else if (s.chance(0.2)) {
        // A short nested task that is completed before the pending answer.
        const TaskSpec* side;
        do side = &s.pick(tasks);
        while (side->required.size() != 1 || side->intent == task.intent);
        std::map<std::string, std::string> side_filled;
        Utterance side_req = render(s.pick(side->requests), values, s, side_filled);
        const std::string& slot = side->required.front();
        if (side_filled.count(slot)) {
          respond(side_req, side->intent, kClose);
        } else {
          respond(side_req, side->intent, kElicitSlot);
          respond(answer(slot, s.pick(values.at(slot))), side->intent, kClose);
        }
      }
      const std::string& v = s.pick(values.at(missing));
      Utterance ans = answer(missing, v);
      filled[missing] = v;
      last = ans;
    }
    if (s.chance(0.5)) {
      respond(last, task.intent, kConfirm);
      if (s.chance(0.75)) {
        Utterance u;
        u.words(s.pick(yes));
        respond(u, task.intent, kClose);
      } else {
        const std::string& slot = s.pick(task.required);
        std::string form = s.pick(change);
        auto vpos = form.find("{v}");
        Utterance u;
        u.words(form.substr(0, vpos));
        u.value(slot, s.pick(values.at(slot)));
        respond(u, task.intent, kClose);
      }
    } else {
      respond(last, task.intent, kClose);
    }
  }
  if (s.chance(0.35)) {
    Utterance u;
    u.words(s.pick(bye));
    turns.push_back(u.turn("Goodbye", kClose));
  }
}

// ---- booking-like ---------------------------------------------------------

inline const SlotValues& booking_values() {
  static const SlotValues v = {
      {"food", {"chinese", "italian", "indian", "thai", "french", "modern european", "korean", "spanish"}},
      {"pricerange", {"cheap", "moderate", "expensive"}},
      {"area", {"north", "south", "east", "west", "centre"}},
      {"people", {"2", "3", "4", "5", "6", "7"}},
      {"time", {"6", "7", "8", "9", "6:30", "7:30"}},
  };
  return v;
}

inline void emit_booking_conversation(Sampler& s, RawConversation& conv) {
  const auto& values = booking_values();
  static const std::map<std::string, std::vector<std::string>> inform_full = {
      {"food", {"i want {food} food", "i am looking for a {food} restaurant", "{food} food please"}},
      {"pricerange", {"i want a {pricerange} restaurant", "something {pricerange}", "a {pricerange} place please"}},
      {"area", {"in the {area} part of town", "somewhere in the {area}", "the {area} please"}},
      {"people", {"a table for {people}", "for {people} people", "{people}"}},
      {"time", {"at {time}", "around {time} please", "{time}"}},
  };
  static const std::vector<std::string> yes = {"yes", "right", "correct", "yes that is right"};
  static const std::vector<std::string> no = {"no", "no that is wrong", "wrong"};
  static const std::vector<std::pair<std::string, std::vector<std::string>>> requests = {
      {"request_address", {"what is the address", "and the address", "where is it"}},
      {"request_phone", {"what is the phone number", "and the phone number"}},
      {"request_postcode", {"what is the postcode", "and the postcode"}},
      {"reqalts", {"is there anything else", "how about another one"}},
  };
  auto& turns = conv.turns;
  auto add = [&](const Utterance& u, const std::string& intent, const std::string& act) {
    turns.push_back(u.turn(intent, act));
  };

  if (s.chance(0.3)) {
    Utterance u;
    u.words(s.chance(0.5) ? "hello" : "hi");
    add(u, "greet", kElicitSlot);
  }
  std::vector<std::string> search = {"food", "area", "pricerange"};
  std::vector<std::string> order = {"food", "area", "pricerange"};
  if (s.chance(0.5)) std::swap(order[0], order[1 + s.index(2)]);
  std::size_t search_slots = 1 + s.index(3);
  auto inform_slot = [&](const std::string& slot, bool last) {
    std::map<std::string, std::string> filled;
    Utterance u = render(s.pick(inform_full.at(slot)), values, s, filled);
    std::string intent = "inform_" + slot;
    if (s.chance(0.45)) {
      add(u, intent, kConfirm);
      Utterance a;
      if (s.chance(0.8)) {
        a.words(s.pick(yes));
        add(a, "confirm_" + slot, last ? kInform : kElicitSlot);
      } else {
        a.words(s.pick(no));
        add(a, "deny", kElicitSlot);
        std::map<std::string, std::string> again;
        Utterance b = render("{" + slot + "}", values, s, again);
        add(b, intent, last ? kInform : kElicitSlot);
      }
    } else {
      add(u, intent, last ? kInform : kElicitSlot);
    }
  };
  for (std::size_t i = 0; i < search_slots; ++i) inform_slot(order[i], i + 1 == search_slots);

  std::size_t extras = s.index(3);
  for (std::size_t e = 0; e < extras; ++e) {
    if (s.chance(0.3)) {
      Utterance u;
      u.words("book a table");
      add(u, "book_table", kElicitSlot);
      inform_slot("people", false);
      inform_slot("time", true);
      break;
    }
    const auto& [intent, forms] = s.pick(requests);
    Utterance u;
    u.words(s.pick(forms));
    add(u, intent, kInform);
  }
  Utterance end;
  if (s.chance(0.5)) {
    end.words(s.chance(0.5) ? "thank you" : "thanks");
    add(end, "thankyou", kClose);
  } else {
    end.words(s.chance(0.5) ? "bye" : "goodbye");
    add(end, "bye", kClose);
  }
}

}  // namespace synth

inline std::vector<RawConversation> generate_synthetic_raw(std::uint64_t seed, std::size_t n_conversations,
                                                           Profile profile) {
  synth::Sampler s(seed);
  std::vector<RawConversation> out;
  out.reserve(n_conversations);
  const char* prefix = profile == Profile::CableLike ? "cable-" : "booking-";
  for (std::size_t i = 0; i < n_conversations; ++i) {
    RawConversation conv;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    conv.id = prefix + std::string(buf);
    if (profile == Profile::CableLike)
      synth::emit_cable_conversation(s, conv);
    else
      synth::emit_booking_conversation(s, conv);
    out.push_back(std::move(conv));
  }
  return out;
}

/// Generates a corpus and encodes it with vocabularies built from itself.
inline Dataset generate_synthetic(std::uint64_t seed, std::size_t n_conversations, Profile profile) {
  auto raw = generate_synthetic_raw(seed, n_conversations, profile);
  return encode_dataset(raw, build_vocabularies(raw), Split::Train);
}

inline Profile parse_profile(const std::string& s) {
  if (s == "cable-like" || s == "cable") return Profile::CableLike;
  if (s == "booking-like" || s == "booking") return Profile::BookingLike;
  throw ConfigError("unknown profile '" + s + "' (expected cable-like or booking-like)");
}

}  // namespace casa
