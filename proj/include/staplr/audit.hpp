#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace staplr {

/// One train/evaluate split performed somewhere during fitting, expressed in
/// dataset-global row indices. `context` is a slash-separated path such as
/// "rep0/outer3/leaf:gm/oof2/cv5".
struct AuditEvent {
    std::string context;
    std::string stage;
    std::vector<std::size_t> train;
    std::vector<std::size_t> evaluate;
};

/// Receives audit events. May be called concurrently; the hook must synchronize.
using AuditHook = std::function<void(const AuditEvent&)>;

/// Carries the audit hook plus the local-to-global row map through nested fits.
/// A default-constructed context records nothing.
class AuditContext {
public:
    AuditContext() = default;
    AuditContext(const AuditHook* hook, std::string label, std::vector<std::size_t> rows = {})
        : hook_(hook), label_(std::move(label)), rows_(std::move(rows)) {}

    bool active() const noexcept { return hook_ != nullptr && *hook_; }
    const std::string& label() const noexcept { return label_; }

    std::size_t global(std::size_t local) const { return rows_.empty() ? local : rows_[local]; }

    void report(std::string_view stage, const std::vector<std::size_t>& train_local,
                const std::vector<std::size_t>& eval_local) const {
        if (!active()) return;
        AuditEvent ev{label_, std::string(stage), {}, {}};
        ev.train.reserve(train_local.size());
        for (auto i : train_local) ev.train.push_back(global(i));
        ev.evaluate.reserve(eval_local.size());
        for (auto i : eval_local) ev.evaluate.push_back(global(i));
        (*hook_)(ev);
    }

    /// Context for a fit restricted to `local_subset` of the current rows.
    AuditContext sub(std::string_view label, const std::vector<std::size_t>& local_subset) const {
        if (!active()) return {};
        std::vector<std::size_t> rows;
        rows.reserve(local_subset.size());
        for (auto i : local_subset) rows.push_back(global(i));
        return AuditContext(hook_, join(label), std::move(rows));
    }

    /// Same rows, deeper label.
    AuditContext child(std::string_view label) const {
        if (!active()) return {};
        return AuditContext(hook_, join(label), rows_);
    }

private:
    std::string join(std::string_view label) const {
        return label_.empty() ? std::string(label) : label_ + "/" + std::string(label);
    }

    const AuditHook* hook_ = nullptr;
    std::string label_;
    std::vector<std::size_t> rows_;
};

}  // namespace staplr
